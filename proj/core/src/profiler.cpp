#include "firead/profiler.hpp"

#include <cstdio>
#include <map>
#include <sstream>

#include <json.hpp>

#include "firead/op_counter.hpp"
#include "firead/weights.hpp"

namespace firead {

namespace {

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : s) {
    if (c == '.') {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  parts.push_back(cur);
  return parts;
}

std::string printf_string(const char* fmt, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, fmt, args...);
  return buf;
}

std::string human_bytes(std::uint64_t b) { return printf_string("%.2f MB", static_cast<double>(b) / 1e6); }

}  // namespace

std::string layer_of(const std::string& name) {
  const auto p = split(name);
  std::size_t keep = 3;
  if (p.size() >= 2 && p[0] == "backbone" && (p[1] == "stem" || p[1] == "sppf")) keep = 2;
  if (p.size() >= 2 && p[0] == "neck" && p[1].rfind("down_", 0) == 0) keep = 2;
  if (p.size() <= keep) keep = p.size() - 1;
  std::string out = p[0];
  for (std::size_t i = 1; i < keep; ++i) out += "." + p[i];
  return out;
}

template <typename T>
std::int64_t count_params(const Model<T>& model) {
  std::int64_t n = 0;
  for (const auto& t : model.tensors())
    if (t.trainable) n += t.tensor.numel();
  return n;
}

template <typename T>
std::int64_t count_macs(const Model<T>& model, int input_size) {
  OpCounter counter(true);
  {
    NoGradGuard no_grad;
    OpCounterScope scope(counter);
    model.forward(Tensor<T>::zeros({1, 3, input_size, input_size}), Mode::infer);
  }
  return counter.total();
}

template <typename T>
ProfileReport profile(const Model<T>& model, int input_size) {
  OpCounter counter(true);
  {
    NoGradGuard no_grad;
    OpCounterScope scope(counter);
    model.forward(Tensor<T>::zeros({1, 3, input_size, input_size}), Mode::infer);
  }
  ProfileReport r;
  r.input_size = input_size;
  std::map<std::string, std::size_t> index;
  for (const auto& t : model.tensors()) {
    const std::string layer = layer_of(t.name);
    auto [it, inserted] = index.try_emplace(layer, r.rows.size());
    if (inserted) r.rows.push_back({layer, 0, 0});
    ProfileRow& row = r.rows[it->second];
    if (t.trainable) {
      row.params += t.tensor.numel();
      row.macs += counter.macs_for(t.tensor.id());
    } else {
      r.buffer_elements += t.tensor.numel();
    }
  }
  for (const auto& row : r.rows) {
    r.params += row.params;
    r.macs += row.macs;
  }
  r.gflops = 2.0 * static_cast<double>(r.macs) / 1e9;
  r.data_bytes_f32 = static_cast<std::uint64_t>(r.params) * 4;
  r.data_bytes_f16 = static_cast<std::uint64_t>(r.params) * 2;
  r.archive_bytes_f32 = archive_size(model.tensors(), Dtype::f32);
  r.archive_bytes_f16 = archive_size(model.tensors(), Dtype::f16);
  return r;
}

std::string format_report(const ProfileReport& r) {
  std::size_t width = 5;
  for (const auto& row : r.rows) width = std::max(width, row.layer.size());
  const int w = static_cast<int>(width);
  std::ostringstream os;
  os << printf_string("%-*s %12s %16s\n", w, "layer", "params", "MACs");
  for (const auto& row : r.rows)
    os << printf_string("%-*s %12lld %16lld\n", w, row.layer.c_str(), static_cast<long long>(row.params),
                        static_cast<long long>(row.macs));
  os << printf_string("%-*s %12lld %16lld\n", w, "total", static_cast<long long>(r.params),
                      static_cast<long long>(r.macs));
  os << "\n";
  os << printf_string("input          %d x %d\n", r.input_size, r.input_size);
  os << printf_string("params         %.3f M\n", static_cast<double>(r.params) / 1e6);
  os << printf_string("GFLOPs         %.3f (2 x MACs)\n", r.gflops);
  os << printf_string("data f32       %s\n", human_bytes(r.data_bytes_f32).c_str());
  os << printf_string("data f16       %s\n", human_bytes(r.data_bytes_f16).c_str());
  os << printf_string("archive f32    %s (%llu bytes)\n", human_bytes(r.archive_bytes_f32).c_str(),
                      static_cast<unsigned long long>(r.archive_bytes_f32));
  os << printf_string("archive f16    %s (%llu bytes)\n", human_bytes(r.archive_bytes_f16).c_str(),
                      static_cast<unsigned long long>(r.archive_bytes_f16));
  os << "\nMACs cover conv and linear layers only; normalization, activations, pooling and\n"
        "elementwise gating are counted as zero. Params exclude BN running statistics\n"
        "("
     << r.buffer_elements << " buffer elements, included in the archive sizes).\n";
  return os.str();
}

std::string format_report_records(const ProfileReport& r) {
  std::ostringstream os;
  for (const auto& row : r.rows) {
    nlohmann::ordered_json j;
    j["layer"] = row.layer;
    j["params"] = row.params;
    j["macs"] = row.macs;
    os << j.dump() << "\n";
  }
  nlohmann::ordered_json t;
  t["layer"] = "total";
  t["params"] = r.params;
  t["macs"] = r.macs;
  t["gflops"] = r.gflops;
  t["input_size"] = r.input_size;
  t["archive_bytes_f32"] = r.archive_bytes_f32;
  t["archive_bytes_f16"] = r.archive_bytes_f16;
  os << t.dump() << "\n";
  return os.str();
}

std::vector<AblationRow> ablation_report(const ModelConfig& base, int input_size, const std::vector<Variant>& variants) {
  std::vector<AblationRow> rows;
  for (Variant v : variants) {
    ModelConfig c = base;
    const ModelConfig preset = ModelConfig::preset(v);
    c.use_air = preset.use_air;
    c.use_dpdf = preset.use_dpdf;
    Rng rng(0);
    const auto model = Model<float>::build(c, rng);
    rows.push_back({v, profile(model, input_size)});
  }
  return rows;
}

std::string format_ablation(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  const ProfileReport* base = nullptr;
  for (const auto& r : rows)
    if (r.variant == Variant::baseline) base = &r.report;
  os << printf_string("%-10s %10s %9s %10s %12s %12s\n", "variant", "params(M)", "GFLOPs", "f16(MB)", "params vs base",
                      "GFLOPs vs base");
  for (const auto& r : rows) {
    std::string dp = "-", dg = "-";
    if (base && base->params > 0) {
      dp = printf_string("%+.1f%%", 100.0 * (static_cast<double>(r.report.params) / static_cast<double>(base->params) - 1));
      dg = printf_string("%+.1f%%", 100.0 * (r.report.gflops / base->gflops - 1));
    }
    os << printf_string("%-10s %10.3f %9.3f %10.2f %12s %12s\n", std::string(variant_name(r.variant)).c_str(),
                        static_cast<double>(r.report.params) / 1e6, r.report.gflops,
                        static_cast<double>(r.report.data_bytes_f16) / 1e6, dp.c_str(), dg.c_str());
  }
  return os.str();
}

#define FIREAD_INSTANTIATE_PROFILER(T)                          \
  template std::int64_t count_params(const Model<T>&);         \
  template std::int64_t count_macs(const Model<T>&, int);      \
  template ProfileReport profile(const Model<T>&, int);

FIREAD_INSTANTIATE_PROFILER(float)
FIREAD_INSTANTIATE_PROFILER(double)

}  // namespace firead
