#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"

namespace trajcm::cli {

using nlohmann::json;

inline constexpr const char* kVersion = "0.1.0";

/// Runs one command from its resolved configuration, writes its outputs and
/// manifest.json into `out_dir` and returns the manifest.
///
/// Commands and their configuration keys:
///   synth:    spec, seed, format
///   estimate: events, width, height, basis, degree, stride, k, tile, nbins,
///             lambda, sigma, time_weighting, lookup, normalization, iters,
///             lr, seed, reference, t_ref, early_stop, times
///   eval:     pred, gt, events, field, k, nbins, fwl_t_ref, threshold
///   render:   events, width, height, field, t_ref, sigma, bits, channel, k, nbins
json execute(const std::string& command, const json& config, const std::filesystem::path& out_dir);

/// Re-runs the command recorded in a manifest. Throws std::invalid_argument
/// if an input file changed since the manifest was written.
json replay(const std::filesystem::path& manifest_path, const std::filesystem::path& out_dir);

/// True when every output recorded in `expected` has the same size and hash
/// in `actual`; mismatches are listed in `report`.
bool same_outputs(const json& expected, const json& actual, std::string& report);

std::string fnv1a64_file(const std::filesystem::path& path);

}  // namespace trajcm::cli
