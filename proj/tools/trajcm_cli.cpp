#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "commands.hpp"
#include "trajcm/common.hpp"

namespace fs = std::filesystem;
using trajcm::cli::json;

namespace {

std::string absolute(const std::string& p) { return p.empty() ? p : fs::absolute(p).lexically_normal().string(); }

void print_summary(const json& manifest, const fs::path& out) {
  std::cout << manifest.at("command").get<std::string>() << ": wrote " << manifest.at("outputs").size()
            << " file(s) to " << out.string() << '\n';
  for (const auto& [key, value] : manifest.at("results").items()) std::cout << "  " << key << " = " << value << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dense continuous-time trajectories from events by contrast maximization"};
  app.set_version_flag("--version", trajcm::cli::kVersion);
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic event scene with ground truth");
  std::string spec_path, synth_out, synth_format = "evt";
  std::uint64_t synth_seed = 0;
  synth->add_option("spec", spec_path, "Scene spec file (key=value lines)")->required();
  synth->add_option("-o,--out", synth_out, "Output directory")->required();
  synth->add_option("--seed", synth_seed, "Random seed");
  synth->add_option("--format", synth_format, "Event file format")->check(CLI::IsMember({"evt", "csv"}));

  // estimate
  auto* est = app.add_subcommand("estimate", "Estimate a trajectory field from events");
  std::string est_events, est_out, basis = "bezier", lookup = "nearest", normalization = "pixel";
  int width = 0, height = 0, degree = 10, stride = 4, k = 32, tile = 64, nbins = 15, iters = 500;
  double lambda = 0.003, sigma = 1.0, lr = 0.05;
  std::uint64_t est_seed = 0;
  bool fixed_ref = false, no_time_weighting = false, early_stop = false;
  std::optional<double> ref_time;
  std::vector<double> times = {1.0 / 6, 2.0 / 6, 3.0 / 6, 4.0 / 6, 5.0 / 6, 1.0};
  est->add_option("events", est_events, "Event file (.evt or .csv)")->required();
  est->add_option("-o,--out", est_out, "Output directory")->required();
  est->add_option("--width", width, "Sensor width for CSV input");
  est->add_option("--height", height, "Sensor height for CSV input");
  est->add_option("--basis", basis, "Trajectory basis")->check(CLI::IsMember({"poly", "bezier"}));
  est->add_option("--degree", degree, "Basis degree N_c")->check(CLI::Range(1, 64));
  est->add_option("--stride", stride, "Anchor spacing in pixels")->check(CLI::Range(1, 1 << 16));
  est->add_option("--k", k, "Nearest trajectories per voxel")->check(CLI::PositiveNumber);
  est->add_option("--tile", tile, "KNN query tile size")->check(CLI::PositiveNumber);
  est->add_option("--nbins", nbins, "Time bins of the displacement volume")->check(CLI::PositiveNumber);
  est->add_option("--lambda", lambda, "Regularizer weight")->check(CLI::NonNegativeNumber);
  est->add_option("--sigma", sigma, "Gaussian voting width (0: bilinear)")->check(CLI::Range(0.0, 10.0));
  est->add_option("--iters", iters, "Optimizer iterations")->check(CLI::NonNegativeNumber);
  est->add_option("--lr", lr, "Adam step size")->check(CLI::PositiveNumber);
  est->add_option("--seed", est_seed, "Seed for reference-time sampling");
  est->add_flag("--fixed-ref", fixed_ref, "Three-reference baseline objective instead of random t_ref");
  est->add_option("--ref-time", ref_time, "Optimize at this single reference time")->check(CLI::Range(0.0, 1.0));
  est->add_flag("--no-time-weighting", no_time_weighting, "Weight all events equally");
  est->add_option("--lookup", lookup, "Volume lookup")->check(CLI::IsMember({"nearest", "trilinear"}));
  est->add_option("--normalization", normalization, "Contrast normalization")->check(CLI::IsMember({"pixel", "none"}));
  est->add_flag("--early-stop", early_stop, "Stop when the loss stalls");
  est->add_option("--times", times, "Flow map times in [0, 1]")->delimiter(',');

  // eval
  auto* ev = app.add_subcommand("eval", "Compare predicted and ground-truth flow maps");
  std::vector<std::string> pred, gt;
  std::string ev_events, ev_field, ev_out;
  int ev_k = 32, ev_nbins = 15, ev_width = 0, ev_height = 0;
  double fwl_t_ref = 0.5, threshold = 3.0;
  ev->add_option("--pred", pred, "Predicted FLO1 maps in time order")->required();
  ev->add_option("--gt", gt, "Ground-truth FLO1 maps in time order")->required();
  ev->add_option("--events", ev_events, "Events for the flow warp loss");
  ev->add_option("--field", ev_field, "Trajectory field for the flow warp loss");
  ev->add_option("--width", ev_width, "Sensor width for CSV input");
  ev->add_option("--height", ev_height, "Sensor height for CSV input");
  ev->add_option("--k", ev_k, "Nearest trajectories per voxel")->check(CLI::PositiveNumber);
  ev->add_option("--nbins", ev_nbins, "Time bins")->check(CLI::PositiveNumber);
  ev->add_option("--fwl-t-ref", fwl_t_ref, "Reference time of the flow warp loss");
  ev->add_option("--threshold", threshold, "Outlier threshold in pixels")->check(CLI::PositiveNumber);
  ev->add_option("-o,--out", ev_out, "Output directory")->required();

  // render
  auto* render = app.add_subcommand("render", "Render an image of warped events as PGM");
  std::string r_events, r_field, r_out, channel = "sum";
  int r_width = 0, r_height = 0, bits = 8, r_k = 32, r_nbins = 15;
  double t_ref = 0.5, r_sigma = 0.0;
  render->add_option("events", r_events, "Event file")->required();
  render->add_option("-o,--out", r_out, "Output directory")->required();
  render->add_option("--field", r_field, "Trajectory field (default: no warp)");
  render->add_option("--t-ref", t_ref, "Reference time in [0, 1]");
  render->add_option("--sigma", r_sigma, "Gaussian voting width (0: bilinear)")->check(CLI::Range(0.0, 10.0));
  render->add_option("--bits", bits, "PGM depth")->check(CLI::IsMember({8, 16}));
  render->add_option("--channel", channel, "Polarity channel")->check(CLI::IsMember({"sum", "pos", "neg"}));
  render->add_option("--width", r_width, "Sensor width for CSV input");
  render->add_option("--height", r_height, "Sensor height for CSV input");
  render->add_option("--k", r_k, "Nearest trajectories per voxel")->check(CLI::PositiveNumber);
  render->add_option("--nbins", r_nbins, "Time bins")->check(CLI::PositiveNumber);

  // replay
  auto* rep = app.add_subcommand("replay", "Re-run a command from its manifest");
  std::string manifest_path, rep_out;
  bool check = false;
  rep->add_option("manifest", manifest_path, "manifest.json of an earlier run")->required();
  rep->add_option("-o,--out", rep_out, "Output directory (default: the manifest's directory)");
  rep->add_flag("--check", check, "Fail unless every output is byte-identical to the recorded one");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    json manifest;
    fs::path out;
    if (*synth) {
      out = synth_out;
      manifest = trajcm::cli::execute(
          "synth", {{"spec", absolute(spec_path)}, {"seed", synth_seed}, {"format", synth_format}}, out);
    } else if (*est) {
      if (fixed_ref && ref_time) throw std::invalid_argument("--fixed-ref and --ref-time are exclusive");
      out = est_out;
      json cfg = {{"events", absolute(est_events)}, {"width", width}, {"height", height},
                  {"basis", basis}, {"degree", degree}, {"stride", stride}, {"k", k}, {"tile", tile},
                  {"nbins", nbins}, {"lambda", lambda}, {"sigma", sigma},
                  {"time_weighting", !no_time_weighting}, {"lookup", lookup},
                  {"normalization", normalization}, {"iters", iters}, {"lr", lr}, {"seed", est_seed},
                  {"reference", fixed_ref ? "three-point" : (ref_time ? "fixed" : "random")},
                  {"t_ref", ref_time.value_or(0.0)}, {"early_stop", early_stop}, {"times", times}};
      manifest = trajcm::cli::execute("estimate", cfg, out);
    } else if (*ev) {
      out = ev_out;
      json p = json::array(), g = json::array();
      for (const auto& s : pred) p.push_back(absolute(s));
      for (const auto& s : gt) g.push_back(absolute(s));
      json cfg = {{"pred", p}, {"gt", g}, {"events", absolute(ev_events)}, {"field", absolute(ev_field)},
                  {"width", ev_width}, {"height", ev_height}, {"k", ev_k}, {"nbins", ev_nbins},
                  {"fwl_t_ref", fwl_t_ref}, {"threshold", threshold}};
      manifest = trajcm::cli::execute("eval", cfg, out);
      std::ifstream txt(out / "eval.txt");
      std::cout << txt.rdbuf();
    } else if (*render) {
      out = r_out;
      json cfg = {{"events", absolute(r_events)}, {"width", r_width}, {"height", r_height},
                  {"field", absolute(r_field)}, {"t_ref", t_ref}, {"sigma", r_sigma}, {"bits", bits},
                  {"channel", channel}, {"k", r_k}, {"nbins", r_nbins}};
      manifest = trajcm::cli::execute("render", cfg, out);
    } else if (*rep) {
      const fs::path mpath = manifest_path;
      std::ifstream in(mpath);
      if (!in) throw trajcm::ParseError("cannot open manifest '" + manifest_path + "'");
      const json recorded = json::parse(in, nullptr, false);
      if (recorded.is_discarded()) throw trajcm::ParseError(manifest_path + ": not valid JSON");
      out = rep_out.empty() ? mpath.parent_path() : fs::path(rep_out);
      if (out.empty()) out = ".";
      manifest = trajcm::cli::replay(mpath, out);
      if (check) {
        std::string report;
        if (!trajcm::cli::same_outputs(recorded, manifest, report)) {
          std::cerr << "replay: outputs differ from the manifest\n" << report;
          return 1;
        }
        std::cout << "replay: all " << manifest.at("outputs").size() << " output(s) byte-identical\n";
      }
    }
    print_summary(manifest, out);
    return 0;
  } catch (const trajcm::NumericalError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const trajcm::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const json::exception& e) {
    std::cerr << "error: malformed manifest: " << e.what() << '\n';
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
