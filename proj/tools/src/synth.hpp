#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "firead/box.hpp"
#include "image.hpp"

namespace firead::tools {

struct SynthOptions {
  int count = 8;
  int size = 128;
  std::uint64_t seed = 7;
};

struct SynthSample {
  std::string name;  // "synth_000.ppm", ...
  Image image;
  std::vector<GroundTruthBox> boxes;
};

/// Noise backgrounds with 1-4 non-overlapping elliptical warm blobs (red >
/// green > blue per pixel), class 0, one tight box each. Throws NumericError
/// if an image violates the red-contrast property.
std::vector<SynthSample> generate_synth(const SynthOptions& options);

/// Mean red value inside the union of the boxes and outside it.
std::pair<double, double> red_contrast(const SynthSample& sample);

/// Writes the images and gt.jsonl into `dir` (created if missing).
void write_synth(const std::vector<SynthSample>& samples, const std::string& dir);

/// Reads gt.jsonl and the images it references (sorted by name).
std::vector<SynthSample> read_synth(const std::string& dir);

}  // namespace firead::tools
