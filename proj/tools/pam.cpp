#include "pam/engine.hpp"
#include "pam/metrics.hpp"
#include "pam/service.hpp"
#include "pam/trainer.hpp"

#include <CLI11.hpp>
#include <httplib.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

using namespace pam;

namespace {

std::vector<ShapeFamily> parse_families(const std::vector<std::string>& names) {
  std::vector<ShapeFamily> out;
  for (const auto& n : names) out.push_back(parse_family(n));
  return out;
}

nlohmann::json read_json_arg(const std::string& arg) {
  // inline JSON or a path to a file
  if (!arg.empty() && (arg.front() == '{' || arg.front() == '[')) return nlohmann::json::parse(arg);
  return nlohmann::json::parse(read_file(arg));
}

EngineFactory make_engines(const std::string& box_path, const std::string& prop_path) {
  auto box = std::shared_ptr<Box2MaskNet<float>>(box2mask_from(load_checkpoint(box_path)));
  auto prop = std::shared_ptr<PropMaskNet<float>>(propmask_from(load_checkpoint(prop_path)));
  return network_engines(std::move(box), std::move(prop));
}

struct Split {
  std::vector<PhantomCase> train, val;
};

Split split_cases(std::vector<PhantomCase> cases, double val_fraction) {
  const auto n_val = static_cast<std::size_t>(static_cast<double>(cases.size()) * val_fraction);
  Split s;
  s.val.assign(cases.end() - static_cast<std::ptrdiff_t>(n_val), cases.end());
  cases.resize(cases.size() - n_val);
  s.train = std::move(cases);
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prompt-driven volumetric segmentation by slice propagation"};
  app.require_subcommand(1);

  // phantom gen
  auto* phantom = app.add_subcommand("phantom", "Synthetic phantoms");
  phantom->require_subcommand(1);
  auto* gen = phantom->add_subcommand("gen", "Generate a phantom suite");
  int gen_n = 20;
  std::uint64_t gen_seed = 1;
  std::string gen_out;
  std::vector<std::string> gen_families{"ellipsoid", "capsule", "torus", "blob"};
  gen->add_option("--n", gen_n, "Number of phantoms")->check(CLI::PositiveNumber);
  gen->add_option("--seed", gen_seed, "RNG seed");
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--families", gen_families, "Shape families, cycled");

  // train
  auto* train = app.add_subcommand("train", "Train Box2Mask or PropMask on a phantom suite");
  std::string model_name, data_dir, out_path, init_path, log_path, config_path;
  int res = 64, epochs = -1, pool = -1, per_epoch = -1, batch = -1;
  std::uint64_t train_seed = 7;
  double val_fraction = 0.2;
  bool keep_best = false;
  train->add_option("model", model_name, "box2mask | propmask")
      ->required()
      ->check(CLI::IsMember({"box2mask", "propmask"}));
  train->add_option("--data", data_dir, "Phantom suite directory")->required();
  train->add_option("--res", res, "Network input resolution")->check(CLI::PositiveNumber);
  train->add_option("--epochs", epochs, "Epochs (default: desk preset)");
  train->add_option("--seed", train_seed, "Seed for pools, init and draws");
  train->add_option("--out", out_path, "Checkpoint path")->required();
  train->add_option("--pool", pool, "ROI samples or tasks (default 2000 / 1000)");
  train->add_option("--samples-per-epoch", per_epoch, "Draws per epoch");
  train->add_option("--batch", batch, "Batch size (samples or tasks)");
  train->add_option("--val-fraction", val_fraction, "Trailing share of cases held out")
      ->check(CLI::Range(0.0, 0.9));
  train->add_option("--init", init_path, "Fine-tune from this checkpoint");
  train->add_option("--config", config_path, "JSON with training overrides");
  train->add_option("--log", log_path, "JSONL metrics log (default stdout)");
  train->add_flag("--keep-best", keep_best, "Keep the best-validation checkpoint");

  // infer
  auto* infer = app.add_subcommand("infer", "Segment a volume from one prompt");
  std::string volume_path, prompt_arg, box_ckpt, prop_ckpt, infer_out, report_path;
  double thickness = 20.0;
  infer->add_option("--volume", volume_path, "PVOL1 f32 volume")->required();
  infer->add_option("--prompt", prompt_arg, "Prompt JSON or path")->required();
  infer->add_option("--ckpt-box", box_ckpt, "Box2Mask checkpoint")->required();
  infer->add_option("--ckpt-prop", prop_ckpt, "PropMask checkpoint")->required();
  infer->add_option("--thickness-mm", thickness, "Propagation thickness");
  infer->add_option("--out", infer_out, "Output u8 PVOL1 mask")->required();
  infer->add_option("--report", report_path, "Run report JSON");

  // eval
  auto* eval = app.add_subcommand("eval", "Compare a predicted mask with the ground truth");
  std::string pred_path, gt_path, csv_path, dataset = "default", object_id;
  eval->add_option("--pred", pred_path, "Predicted u8 PVOL1")->required();
  eval->add_option("--gt", gt_path, "Ground-truth u8 PVOL1")->required();
  eval->add_option("--report", csv_path, "CSV report")->required();
  eval->add_option("--dataset", dataset, "Dataset label");
  eval->add_option("--object-id", object_id, "Object label (default: gt file stem)");

  // ablate
  auto* ablate = app.add_subcommand("ablate", "Start-slice or thickness sweep over a phantom suite");
  std::string sweep, ablate_data, ablate_box, ablate_prop, ablate_csv;
  bool oracle = false;
  ablate->add_option("kind", sweep, "deviation | thickness")
      ->required()
      ->check(CLI::IsMember({"deviation", "thickness"}));
  ablate->add_option("--data", ablate_data, "Phantom suite directory")->required();
  ablate->add_option("--ckpt-box", ablate_box, "Box2Mask checkpoint");
  ablate->add_option("--ckpt-prop", ablate_prop, "PropMask checkpoint");
  ablate->add_flag("--oracle", oracle, "Use ground-truth stubs instead of networks");
  ablate->add_option("--thickness-mm", thickness, "Thickness for the deviation sweep");
  ablate->add_option("--out", ablate_csv, "Per-case CSV");

  // serve
  auto* serve = app.add_subcommand("serve", "HTTP API");
  std::string host = "127.0.0.1", serve_box, serve_prop;
  int port = 8080;
  bool serve_oracle = false;
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--port", port, "Port");
  serve->add_option("--ckpt-box", serve_box, "Box2Mask checkpoint");
  serve->add_option("--ckpt-prop", serve_prop, "PropMask checkpoint");
  serve->add_flag("--oracle", serve_oracle, "Ground-truth stubs (needs uploaded ground truth)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      auto cases = make_phantom_suite(parse_families(gen_families), gen_n, gen_seed);
      save_phantom_suite(cases, gen_out);
      std::cout << "wrote " << cases.size() << " phantoms to " << gen_out << "\n";
      return 0;
    }

    if (train->parsed()) {
      const auto kind = parse_model_kind(model_name);
      const bool b2m = kind == ModelKind::kBox2Mask;
      TrainConfig cfg = b2m ? TrainConfig::box2mask_desk() : TrainConfig::propmask_desk();
      cfg.seed = train_seed;
      if (!config_path.empty()) cfg = TrainConfig::from_json(read_json_arg(config_path), cfg);
      if (epochs >= 0) cfg.epochs = epochs;
      if (per_epoch > 0) cfg.samples_per_epoch = per_epoch;
      if (batch > 0) cfg.batch = batch;
      cfg.keep_best = cfg.keep_best || keep_best;
      cfg.validate();
      NetConfig net = NetConfig::desk();
      net.resolution = res;
      net.validate();

      std::optional<Checkpoint> init;
      if (!init_path.empty()) init = load_checkpoint(init_path);

      std::ofstream log_file;
      if (!log_path.empty()) log_file.open(log_path);
      std::ostream& log = log_path.empty() ? std::cout : log_file;
      LogSink sink = [&log](const MetricsRecord& r) { log << r.to_json().dump() << std::endl; };

      const auto split = split_cases(load_phantom_suite(data_dir), val_fraction);
      TrainResult result;
      if (b2m) {
        RoiConfig rc;
        rc.resolution = res;
        const int n = pool > 0 ? pool : 2000;
        const auto tr = build_roi_pool(split.train, n, rc, train_seed);
        const auto va = split.val.empty() ? std::vector<RoiSample>{}
                                          : build_roi_pool(split.val, n / 10, rc, train_seed + 1);
        result = train_box2mask(tr, va, net, cfg, init ? &*init : nullptr, sink);
      } else {
        TaskConfig tc;
        tc.resolution = res;
        const int n = pool > 0 ? pool : 1000;
        const auto tr = build_task_pool(split.train, n, tc, train_seed);
        const auto va = split.val.empty() ? std::vector<PropagationTask>{}
                                          : build_task_pool(split.val, n / 10, tc, train_seed + 1);
        result = train_propmask(tr, va, net, cfg, init ? &*init : nullptr, sink);
      }
      save_checkpoint(result.checkpoint, out_path);
      std::cerr << "saved " << out_path << " hash " << result.checkpoint.hash() << "\n";
      return 0;
    }

    if (infer->parsed()) {
      const auto volume = read_volume<float>(volume_path);
      const Prompt prompt = parse_prompt(read_json_arg(prompt_arg), volume);
      EngineConfig ec;
      ec.thickness_mm = thickness;
      ec.validate();
      Engines engines = make_engines(box_ckpt, prop_ckpt)(volume, nullptr);
      const auto result = segment_volume(volume, prompt, *engines.boxes, *engines.propagator, ec);
      write_volume(result.mask, infer_out);
      const std::string report = result.report.to_json().dump(2);
      if (report_path.empty())
        std::cout << report << "\n";
      else
        write_file(report_path, report + "\n");
      return 0;
    }

    if (eval->parsed()) {
      const auto pred = read_volume<std::uint8_t>(pred_path);
      const auto gt = read_volume<std::uint8_t>(gt_path);
      ObjectRecord rec;
      rec.dataset = dataset;
      rec.object_id = object_id.empty() ? std::filesystem::path(gt_path).stem().string() : object_id;
      rec.dsc = dsc(pred, gt);
      rec.shape = irregularity(gt, Axis::kZ);
      write_file(csv_path, report_csv({rec}));
      std::printf("dsc %.6f\n", rec.dsc);
      return 0;
    }

    if (ablate->parsed()) {
      const auto cases = load_phantom_suite(ablate_data);
      EngineFactory factory;
      if (oracle) {
        factory = oracle_engines();
      } else {
        if (ablate_box.empty() || ablate_prop.empty())
          throw Error("bad_args", "--ckpt-box and --ckpt-prop are required without --oracle");
        factory = make_engines(ablate_box, ablate_prop);
      }
      EngineConfig ec;
      ec.thickness_mm = thickness;
      const bool dev = sweep == "deviation";
      const auto& params = dev ? default_deviations() : default_thicknesses();
      std::ostringstream csv;
      csv.precision(17);
      csv << "object_id,parameter,start_slice,dsc,error\n";
      std::map<double, std::vector<double>> by_param;
      for (const auto& c : cases) {
        Engines e = factory(c.volume, &c.mask);
        const auto cells =
            dev ? deviation_harness(c.volume, c.mask, Axis::kZ, params, *e.boxes, *e.propagator, ec)
                : thickness_harness(c.volume, c.mask, Axis::kZ, params, *e.boxes, *e.propagator, ec);
        for (const auto& cell : cells) {
          csv << c.id << ',' << cell.parameter << ',' << cell.start_slice << ',' << cell.dsc << ','
              << cell.error << '\n';
          by_param[cell.parameter].push_back(cell.dsc);
        }
      }
      double lo = 1, hi = 0;
      for (const auto& [p, v] : by_param) {
        double s = 0;
        for (double x : v) s += x;
        const double mean = s / static_cast<double>(v.size());
        lo = std::min(lo, mean);
        hi = std::max(hi, mean);
        std::printf("%s %+.3f  mean dsc %.4f\n", sweep.c_str(), p, mean);
      }
      std::printf("spread %.4f\n", hi - lo);
      if (!ablate_csv.empty()) write_file(ablate_csv, csv.str());
      return 0;
    }

    if (serve->parsed()) {
      EngineFactory factory;
      if (serve_oracle) {
        factory = oracle_engines();
      } else {
        if (serve_box.empty() || serve_prop.empty())
          throw Error("bad_args", "--ckpt-box and --ckpt-prop are required without --oracle");
        factory = make_engines(serve_box, serve_prop);
      }
      Service service(factory);
      httplib::Server server;
      mount(service, server);
      std::cerr << "listening on " << host << ":" << port << "\n";
      if (!server.listen(host, port)) throw Error("listen", "cannot bind " + host);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
