#include "firead/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "firead/errors.hpp"

namespace firead {

namespace {

template <typename T>
T evaluate(const std::function<Tensor<T>()>& objective) {
  NoGradGuard no_grad;
  const T value = objective().item();
  if (!std::isfinite(static_cast<double>(value))) throw NumericError("grad_check objective is not finite");
  return value;
}

std::vector<std::int64_t> pick_elements(std::int64_t count, const GradCheckOptions& options, Rng& rng) {
  std::vector<std::int64_t> idx(static_cast<std::size_t>(count));
  std::iota(idx.begin(), idx.end(), 0);
  if (options.max_elements_per_param <= 0 || count <= options.max_elements_per_param) return idx;
  // Partial Fisher-Yates.
  for (std::int64_t i = 0; i < options.max_elements_per_param; ++i) {
    const auto j = i + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(count - i)));
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  idx.resize(static_cast<std::size_t>(options.max_elements_per_param));
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::vector<std::vector<double>> analytic_gradients(const std::function<Tensor<double>()>& objective,
                                                    std::vector<Tensor<double>>& params) {
  for (auto& p : params) p.zero_grad();
  {
    Tensor<double> loss = objective();
    if (!std::isfinite(loss.item())) throw NumericError("grad_check objective is not finite");
    backward(loss);
  }
  std::vector<std::vector<double>> out;
  out.reserve(params.size());
  for (auto& p : params) {
    auto g = p.grad();
    out.emplace_back(g.begin(), g.end());
    if (out.back().empty()) out.back().assign(static_cast<std::size_t>(p.numel()), 0.0);
  }
  return out;
}

template <typename T>
GradCheckResult compare(const std::vector<std::vector<double>>& analytic,
                        const std::function<Tensor<T>()>& objective, std::vector<Tensor<T>>& params,
                        const GradCheckOptions& options) {
  GradCheckResult result;
  Rng rng(options.sample_seed);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto values = params[pi].mutable_data();
    for (std::int64_t e : pick_elements(params[pi].numel(), options, rng)) {
      T& slot = values[static_cast<std::size_t>(e)];
      const T saved = slot;
      auto central = [&](T h) {
        slot = saved + h;
        const T plus = evaluate(objective);
        slot = saved - h;
        const T minus = evaluate(objective);
        slot = saved;
        return static_cast<double>((plus - minus) / (2 * h));
      };
      const double a = analytic[pi][static_cast<std::size_t>(e)];
      T h = static_cast<T>(options.epsilon);
      double numeric = central(h);
      for (int r = 0; r < options.refinements && relative_error(a, numeric) > options.consistency; ++r) {
        if (r == 0) ++result.refined_elements;
        h /= 2;
        const double finer = central(h);
        const bool converged = relative_error(numeric, finer) <= options.consistency;
        numeric = finer;
        if (converged) break;
      }
      const double err = relative_error(a, numeric);
      ++result.elements_checked;
      if (err > result.max_relative_error || result.worst_element < 0) {
        result.max_relative_error = std::max(result.max_relative_error, err);
        result.worst_param = pi;
        result.worst_element = e;
        result.worst_analytic = a;
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

GradCheckResult grad_check(const std::function<Tensor<double>()>& objective, std::vector<Tensor<double>> params,
                           const GradCheckOptions& options) {
  const auto analytic = analytic_gradients(objective, params);
  return compare<double>(analytic, objective, params, options);
}

GradCheckResult grad_check(const std::function<Tensor<double>()>& objective, std::vector<Tensor<double>> params,
                           const std::function<Tensor<long double>()>& reference,
                           std::vector<Tensor<long double>> reference_params, const GradCheckOptions& options) {
  if (reference_params.size() != params.size())
    throw ContractError("grad_check reference has " + std::to_string(reference_params.size()) +
                        " parameters, expected " + std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (reference_params[i].shape() != params[i].shape())
      throw ContractError("grad_check reference parameter " + std::to_string(i) + " has shape " +
                          reference_params[i].shape().str() + ", expected " + params[i].shape().str());
    const auto& a = params[i].data();
    const auto& b = reference_params[i].data();
    for (std::size_t j = 0; j < a.size(); ++j)
      if (static_cast<long double>(a[j]) != b[j])
        throw ContractError("grad_check reference parameter " + std::to_string(i) + " differs at element " +
                            std::to_string(j));
  }
  const auto analytic = analytic_gradients(objective, params);
  return compare<long double>(analytic, reference, reference_params, options);
}

template <typename T>
Tensor<T> random_projection(const Tensor<T>& y, std::uint64_t seed) {
  Rng rng(seed);
  auto weights = Tensor<T>::uniform(y.shape(), -1.0, 1.0, rng);
  return sum(mul(y, weights));
}

template Tensor<double> random_projection(const Tensor<double>&, std::uint64_t);
template Tensor<long double> random_projection(const Tensor<long double>&, std::uint64_t);

}  // namespace firead
