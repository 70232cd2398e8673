#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>

#include "dynlat/error.hpp"
#include "dynlat/executor.hpp"
#include "dynlat/flops.hpp"
#include "dynlat/kv.hpp"
#include "dynlat/latency.hpp"
#include "dynlat/network.hpp"

namespace dynlat::cli {

namespace {

struct Common {
  std::string device = "V100";
  std::string net = "resnet50";
  std::string paradigm = "spatial";
  std::string plan;
  std::vector<double> rates;
  std::string rates_file;
  std::optional<std::int64_t> batch;
  std::string fuse = "all";
  std::string out;
  std::string input;
  int threads = 1;
  bool fma = false;
};

struct BlockSelect {
  std::size_t stage = 1;
  std::size_t block = 1;
};

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kUnknownDevice:
    case ErrorCode::kUnknownNetwork:
    case ErrorCode::kParseError:
      return kBadArguments;
    default:
      return kValidation;
  }
}

FusionFlags parse_fuse(const std::string& text) {
  if (text == "all") return FusionFlags::all();
  if (text == "none") return FusionFlags::none();
  FusionFlags f = FusionFlags::none();
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item == "masker" || item == "masker-conv") {
      f.fuse_masker_conv1 = true;
    } else if (item == "gather" || item == "gather-conv") {
      f.fuse_gather_conv = true;
    } else if (item == "scatter" || item == "scatter-add") {
      f.fuse_scatter_add = true;
    } else {
      throw Error(ErrorCode::kInvalidArgument, "unknown fusion '" + item + "' (use all, none or masker,gather,scatter)");
    }
  }
  return f;
}

std::int64_t default_batch(const HardwareSpec& hw) {
  std::string n = hw.name;
  std::transform(n.begin(), n.end(), n.begin(), [](unsigned char c) { return std::tolower(c); });
  return (n == "tx2" || n == "nano") ? 1 : 128;
}

std::optional<TensorShape> parse_input(const std::string& text) {
  if (text.empty()) return std::nullopt;
  std::vector<std::int64_t> dims;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, 'x')) dims.push_back(kv::to_int(item, "input"));
  if (dims.size() == 2) return TensorShape{3, dims[0], dims[1]};
  if (dims.size() != 3) throw Error(ErrorCode::kInvalidArgument, "--input expects CxHxW or HxW");
  return TensorShape{dims[0], dims[1], dims[2]};
}

std::vector<double> read_rates_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kInvalidArgument, "cannot open rates file '" + path + "'");
  std::vector<double> rates;
  std::string line;
  while (std::getline(in, line)) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto last = line.find_last_not_of(" \t\r");
    rates.push_back(kv::to_double(line.substr(first, last - first + 1), "rate"));
  }
  return rates;
}

std::vector<std::int64_t> parse_int_list(const std::string& text) {
  std::vector<std::int64_t> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(kv::to_int(item, "list"));
  }
  return out;
}

DynamicConfig block_config(Paradigm p, const std::string& plan) {
  auto value = [&]() {
    if (plan.empty()) throw Error(ErrorCode::kParadigmFieldMissing, "--plan is required for this paradigm");
    return kv::to_int(plan, "plan");
  };
  switch (p) {
    case Paradigm::kSpatial: return DynamicConfig::spatial(value());
    case Paradigm::kChannel: return DynamicConfig::channel(value());
    case Paradigm::kLayer: return DynamicConfig::layer();
    case Paradigm::kStatic: return DynamicConfig::fixed();
  }
  return DynamicConfig::fixed();
}

const BlockSpec& select_block(const NetworkSpec& net, const BlockSelect& sel) {
  if (sel.stage < 1 || sel.stage > net.stages.size()) {
    throw Error(ErrorCode::kInvalidArgument, "--stage must lie in [1, " + std::to_string(net.stages.size()) + "]");
  }
  const auto& st = net.stages[sel.stage - 1];
  if (sel.block < 1 || sel.block > static_cast<std::size_t>(st.block_count)) {
    throw Error(ErrorCode::kInvalidArgument, "--block must lie in [1, " + std::to_string(st.block_count) + "]");
  }
  return sel.block == 1 ? st.first_block : st.block_template;
}

std::string block_id(const BlockSelect& sel) {
  return "s" + std::to_string(sel.stage) + "b" + std::to_string(sel.block);
}

// Writes to --out when given, otherwise to the command's stream.
class Sink {
 public:
  Sink(const std::string& path, std::ostream& fallback) : stream_(&fallback) {
    if (!path.empty()) {
      file_.open(path, std::ios::binary);
      if (!file_) throw Error(ErrorCode::kInvalidArgument, "cannot write '" + path + "'");
      stream_ = &file_;
    }
  }
  std::ostream& operator*() { return *stream_; }

 private:
  std::ofstream file_;
  std::ostream* stream_;
};

void add_common(CLI::App* cmd, Common& c, bool with_net = true) {
  cmd->add_option("--device", c.device, "Preset name (V100, RTX3090, RTX3060, TX2, Nano) or device file")
      ->capture_default_str();
  if (with_net) cmd->add_option("--net", c.net, "Network name or architecture file")->capture_default_str();
  cmd->add_option("--paradigm", c.paradigm, "spatial, channel, layer or static")->capture_default_str();
  cmd->add_option("--plan", c.plan, "Granularity: one value for a block, a-b-c-d per stage for a network");
  cmd->add_option("--rate", c.rates, "Activation rate(s)")->delimiter(',');
  cmd->add_option("--rates-file", c.rates_file, "One rate per block, newline separated");
  cmd->add_option("--batch", c.batch, "Batch size (default 128, or 1 on TX2/Nano)");
  cmd->add_option("--fuse", c.fuse, "all, none or a list of masker,gather,scatter")->capture_default_str();
  cmd->add_option("--out", c.out, "Output file (default stdout)");
  cmd->add_option("--input", c.input, "Input resolution override, CxHxW or HxW");
  cmd->add_option("--threads", c.threads, "Tile search worker threads")->capture_default_str();
  cmd->add_flag("--fma", c.fma, "Count two operations per lane per cycle");
}

void add_block_select(CLI::App* cmd, BlockSelect& sel) {
  cmd->add_option("--stage", sel.stage, "Stage index, 1-based")->capture_default_str();
  cmd->add_option("--block", sel.block, "Block index within the stage, 1-based")->capture_default_str();
}

LatencyOptions options(const Common& c) {
  if (c.threads < 1) throw Error(ErrorCode::kInvalidArgument, "--threads must be >= 1");
  return LatencyOptions{c.threads, c.fma};
}

std::int64_t batch_for(const Common& c, const HardwareSpec& hw) {
  const auto b = c.batch.value_or(default_batch(hw));
  if (b < 1) throw Error(ErrorCode::kInvalidArgument, "--batch must be >= 1");
  return b;
}

int cmd_predict_block(const Common& c, const BlockSelect& sel, std::ostream& out) {
  const auto hw = load_hardware(c.device);
  const auto net = build_network(c.net, parse_input(c.input));
  const auto& block = select_block(net, sel);
  const auto paradigm = parse_paradigm(c.paradigm);
  const auto cfg = validate_config(block, block_config(paradigm, c.plan));
  const auto flags = parse_fuse(c.fuse);
  const auto batch = batch_for(c, hw);
  const auto rates = c.rates.empty() ? std::vector<double>{1.0} : c.rates;
  Sink sink(c.out, out);
  *sink << prediction_csv_header() << '\n';
  for (const double r : rates) {
    const auto pred = predict_block(block, cfg, ActivationProfile::uniform(r), flags, hw, batch, options(c));
    *sink << prediction_csv_row(hw, block_id(sel), cfg, r, batch, pred) << '\n';
  }
  return kOk;
}

int cmd_predict_net(const Common& c, bool per_block, std::ostream& out) {
  const auto hw = load_hardware(c.device);
  const auto net = build_network(c.net, parse_input(c.input));
  const auto paradigm = parse_paradigm(c.paradigm);
  std::optional<GranularityPlan> plan;
  if (paradigm == Paradigm::kSpatial || paradigm == Paradigm::kChannel) {
    if (c.plan.empty()) throw Error(ErrorCode::kParadigmFieldMissing, "--plan a-b-c-d is required for this paradigm");
    plan = parse_plan(c.plan, net, paradigm);
  }
  std::vector<double> rates = c.rates;
  if (!c.rates_file.empty()) rates = read_rates_file(c.rates_file);
  if (rates.empty()) rates = {1.0};
  const auto batch = batch_for(c, hw);
  const auto pred = predict_network(net, paradigm, plan, rates, hw, batch, parse_fuse(c.fuse), options(c));

  Sink sink(c.out, out);
  if (per_block) {
    const auto configs = block_configs(net, paradigm, plan);
    *sink << prediction_csv_header() << '\n';
    const auto positions = net.block_positions();
    for (std::size_t i = 0; i < pred.blocks.size(); ++i) {
      const BlockSelect sel{positions[i].first + 1, positions[i].second + 1};
      const double r = rates.size() == 1 ? rates.front() : rates[i];
      *sink << prediction_csv_row(hw, block_id(sel), configs[i], r, batch, pred.blocks[i]) << '\n';
    }
    return kOk;
  }
  using kv::format_double;
  *sink << "net,device,paradigm,plan,batch,blocks,flops_ratio,total_us,static_us,per_image_us,r_ell\n";
  *sink << net.name << ',' << hw.name << ',' << to_string(paradigm) << ',' << (plan ? plan->to_string() : "") << ','
        << batch << ',' << pred.blocks.size() << ',' << format_double(pred.flops.ratio) << ','
        << format_double(pred.total.total_s * 1e6) << ',' << format_double(pred.static_total.total_s * 1e6) << ','
        << format_double(pred.per_image_s * 1e6) << ',' << format_double(pred.r_ell) << '\n';
  return kOk;
}

std::vector<double> default_rate_grid() {
  std::vector<double> g;
  for (int i = 1; i <= 10; ++i) g.push_back(i / 10.0);
  return g;
}

int cmd_sweep(const Common& c, std::optional<std::size_t> stage, std::size_t block, const std::string& grid,
              const std::vector<std::string>& plans, std::ostream& out) {
  SweepRequest req;
  req.hw = load_hardware(c.device);
  req.net = build_network(c.net, parse_input(c.input));
  req.paradigm = parse_paradigm(c.paradigm);
  req.batch = batch_for(c, req.hw);
  req.flags = parse_fuse(c.fuse);
  req.options = options(c);
  req.rates = c.rates.empty() ? default_rate_grid() : c.rates;
  const bool uses_granularity = req.paradigm == Paradigm::kSpatial || req.paradigm == Paradigm::kChannel;
  if (stage) {
    if (block < 1) throw Error(ErrorCode::kInvalidArgument, "--block is 1-based");
    req.stage = *stage;
    req.block = block - 1;
    if (uses_granularity) {
      if (grid.empty()) {
        // Every legal value for the selected block.
        if (*stage < 1 || *stage > req.net.stages.size()) throw Error(ErrorCode::kInvalidArgument, "stage out of range");
        const auto& b = req.net.stages[*stage - 1].first_block;
        const auto o = b.conv2_output_shape();
        req.granularities = req.paradigm == Paradigm::kSpatial ? enumerate_granularities(std::gcd(o.height, o.width))
                                                               : enumerate_granularities(b.conv2.out_channels);
      } else {
        req.granularities = parse_int_list(grid);
      }
    }
  } else if (uses_granularity) {
    std::vector<std::string> texts = plans;
    if (texts.empty() && !c.plan.empty()) texts.push_back(c.plan);
    if (texts.empty()) throw Error(ErrorCode::kInvalidArgument, "network sweeps need --plans or --stage");
    for (const auto& t : texts) req.plans.push_back(parse_plan(t, req.net, req.paradigm));
  }
  const auto rows = sweep(req);
  Sink sink(c.out, out);
  *sink << sweep_csv_header() << '\n';
  for (const auto& r : rows) *sink << sweep_csv_row(r) << '\n';
  return kOk;
}

int cmd_flops(const Common& c, bool no_classifier, std::ostream& out) {
  auto net = build_network(c.net, parse_input(c.input));
  if (no_classifier) net.include_classifier = false;
  const auto paradigm = parse_paradigm(c.paradigm);
  std::optional<GranularityPlan> plan;
  if (paradigm == Paradigm::kSpatial || paradigm == Paradigm::kChannel) {
    if (c.plan.empty()) throw Error(ErrorCode::kParadigmFieldMissing, "--plan a-b-c-d is required for this paradigm");
    plan = parse_plan(c.plan, net, paradigm);
  }
  std::vector<double> rates = c.rates;
  if (!c.rates_file.empty()) rates = read_rates_file(c.rates_file);
  if (rates.empty()) rates = {1.0};
  const auto n = net.block_count();
  if (rates.size() != 1 && rates.size() != n) {
    throw Error(ErrorCode::kProfileCountMismatch,
                "expected 1 or " + std::to_string(n) + " rates, got " + std::to_string(rates.size()));
  }
  std::vector<ActivationProfile> profiles;
  for (std::size_t i = 0; i < n; ++i) profiles.push_back(ActivationProfile::uniform(rates.size() == 1 ? rates[0] : rates[i]));
  const auto report = network_flops(net, block_configs(net, paradigm, plan), profiles);

  using kv::format_double;
  Sink sink(c.out, out);
  *sink << flops_csv_header() << '\n';
  const auto positions = net.block_positions();
  for (std::size_t i = 0; i < n; ++i) {
    const BlockSelect sel{positions[i].first + 1, positions[i].second + 1};
    *sink << flops_csv_row(block_id(sel), report.blocks_static[i], report.blocks_dynamic[i]) << '\n';
  }
  *sink << "stem,,,,,," << report.stem << ',' << report.stem << ",1\n";
  if (net.include_classifier) *sink << "classifier,,,,,," << report.classifier << ',' << report.classifier << ",1\n";
  *sink << "total,,,,,," << report.f_stat << ',' << format_double(report.f_dyn) << ','
        << format_double(report.ratio) << '\n';
  return kOk;
}

int cmd_ablate(const Common& c, const BlockSelect& sel, std::ostream& out) {
  const auto hw = load_hardware(c.device);
  const auto net = build_network(c.net, parse_input(c.input));
  const auto& block = select_block(net, sel);
  const auto cfg = validate_config(block, block_config(parse_paradigm(c.paradigm), c.plan));
  const double r = c.rates.empty() ? 1.0 : c.rates.front();
  const auto batch = batch_for(c, hw);
  const auto rows = ablate_fusion(block, cfg, ActivationProfile::uniform(r), hw, batch, options(c));
  using kv::format_double;
  Sink sink(c.out, out);
  *sink << "device,block_id,fusion,masker_conv,gather_conv,scatter_add,data_us,compute_us,total_us\n";
  for (const auto& row : rows) {
    *sink << hw.name << ',' << block_id(sel) << ',' << row.flags.to_string() << ',' << row.flags.fuse_masker_conv1
          << ',' << row.flags.fuse_gather_conv << ',' << row.flags.fuse_scatter_add << ','
          << format_double(row.latency.data_s * 1e6) << ',' << format_double(row.latency.compute_s * 1e6) << ','
          << format_double(row.latency.total_s * 1e6) << '\n';
  }
  return kOk;
}

int cmd_verify(std::size_t cases_per_paradigm, std::uint64_t seed, const std::string& vectors, bool fault,
               const std::string& out_path, std::ostream& out) {
  std::vector<VerifyCase> cases;
  if (!vectors.empty()) {
    std::ifstream in(vectors);
    if (!in) throw Error(ErrorCode::kInvalidArgument, "cannot open '" + vectors + "'");
    std::stringstream text;
    text << in.rdbuf();
    cases = parse_verify_cases(text.str());
  } else {
    cases = default_verify_cases(cases_per_paradigm, seed);
  }
  Sink sink(out_path, out);
  if (cases.empty()) {
    *sink << "0 cases: nothing to verify\n";
    return kOk;
  }
  ExecutorFault f;
  f.flip_scatter_index = fault;
  std::map<Paradigm, std::pair<std::size_t, double>> worst;
  std::size_t failures = 0;
  for (const auto& c : cases) {
    const auto r = run_verify_case(c, f);
    auto& [count, dev] = worst[c.paradigm];
    ++count;
    dev = std::max(dev, r.max_deviation);
    if (!r.passed) ++failures;
  }
  *sink << "paradigm,cases,max_deviation\n";
  for (const auto& [p, v] : worst) *sink << to_string(p) << ',' << v.first << ',' << kv::format_double(v.second) << '\n';
  *sink << cases.size() << " cases, " << failures << " failed\n";
  return failures == 0 ? kOk : kVerifyFailed;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Latency and FLOPs model for dynamic bottleneck networks", "dynlat"};
  app.require_subcommand(1);

  Common cb, cn, cs, cf, ca;
  cf.paradigm = "static";
  BlockSelect sel;

  auto* pb = app.add_subcommand("predict-block", "Latency of one block");
  add_common(pb, cb);
  add_block_select(pb, sel);

  bool per_block = false;
  auto* pn = app.add_subcommand("predict-net", "Latency of a whole network");
  add_common(pn, cn);
  pn->add_flag("--per-block", per_block, "One row per block instead of a summary");

  std::optional<std::size_t> sweep_stage;
  std::size_t sweep_block = 1;
  std::string grid;
  std::vector<std::string> plans;
  auto* sw = app.add_subcommand("sweep", "Latency over granularity and rate grids");
  add_common(sw, cs);
  sw->add_option("--stage", sweep_stage, "Sweep one block of this stage (1-based)");
  sw->add_option("--block", sweep_block, "Block within the stage, 1-based")->capture_default_str();
  sw->add_option("--granularities", grid, "Comma-separated S or G values (default: all divisors)");
  sw->add_option("--plans", plans, "Per-stage plans for network sweeps")->delimiter(';');

  bool no_classifier = false;
  auto* fl = app.add_subcommand("flops", "Per-block MAC counts");
  add_common(fl, cf);
  fl->add_flag("--no-classifier", no_classifier, "Backbone only");

  auto* ab = app.add_subcommand("ablate-fusion", "All eight fusion combinations for one block");
  add_common(ab, ca);
  add_block_select(ab, sel);

  std::size_t verify_cases = 100;
  std::uint64_t seed = 2024;
  std::string vectors;
  bool fault = false;
  std::string verify_out;
  auto* vf = app.add_subcommand("verify", "Sparse vs dense-masked executor equivalence");
  vf->add_option("--cases", verify_cases, "Seeded cases per paradigm")->capture_default_str();
  vf->add_option("--seed", seed, "Case generator seed")->capture_default_str();
  vf->add_option("--vectors", vectors, "Test-vector file instead of generated cases");
  vf->add_option("--out", verify_out, "Output file (default stdout)");
  vf->add_flag("--inject-fault", fault, "Corrupt one scatter index (self-test)");

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kBadArguments;
  }

  try {
    if (*pb) return cmd_predict_block(cb, sel, out);
    if (*pn) return cmd_predict_net(cn, per_block, out);
    if (*sw) return cmd_sweep(cs, sweep_stage, sweep_block, grid, plans, out);
    if (*fl) return cmd_flops(cf, no_classifier, out);
    if (*ab) return cmd_ablate(ca, sel, out);
    if (*vf) return cmd_verify(verify_cases, seed, vectors, fault, verify_out, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kBadArguments;
  }
  return kBadArguments;
}

}  // namespace dynlat::cli
