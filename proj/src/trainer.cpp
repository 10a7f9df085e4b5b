#include "pam/trainer.hpp"

#include "pam/metrics.hpp"

#include <chrono>
#include <filesystem>
#include <cmath>
#include <numbers>

namespace pam {

TrainConfig TrainConfig::box2mask_desk() { return {}; }

TrainConfig TrainConfig::propmask_desk() {
  TrainConfig c;
  c.lr0 = 5e-4;
  c.samples_per_epoch = 240;
  c.batch = 4;
  return c;
}

void TrainConfig::validate() const {
  if (!(lr0 >= eta_min && eta_min >= 0)) throw Error("bad_config", "need lr0 >= eta_min >= 0");
  if (!(t_max > 0)) throw Error("bad_config", "t_max must be positive");
  if (weight_decay < 0) throw Error("bad_config", "weight_decay must be >= 0");
  if (epochs < 0 || samples_per_epoch < 1 || batch < 1 || eval_interval < 1)
    throw Error("bad_config", "epochs >= 0, samples_per_epoch, batch, eval_interval >= 1");
}

nlohmann::ordered_json TrainConfig::to_json() const {
  nlohmann::ordered_json j;
  j["lr0"] = lr0;
  j["weight_decay"] = weight_decay;
  j["t_max"] = t_max;
  j["eta_min"] = eta_min;
  j["beta1"] = beta1;
  j["beta2"] = beta2;
  j["adam_eps"] = adam_eps;
  j["epochs"] = epochs;
  j["samples_per_epoch"] = samples_per_epoch;
  j["batch"] = batch;
  j["eval_interval"] = eval_interval;
  j["keep_best"] = keep_best;
  j["seed"] = seed;
  return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j, TrainConfig c) {
  c.lr0 = j.value("lr0", c.lr0);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.t_max = j.value("t_max", c.t_max);
  c.eta_min = j.value("eta_min", c.eta_min);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  c.epochs = j.value("epochs", c.epochs);
  c.samples_per_epoch = j.value("samples_per_epoch", c.samples_per_epoch);
  c.batch = j.value("batch", c.batch);
  c.eval_interval = j.value("eval_interval", c.eval_interval);
  c.keep_best = j.value("keep_best", c.keep_best);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

double cosine_lr(double epoch, const TrainConfig& cfg) {
  const double t = std::min(std::max(epoch, 0.0), cfg.t_max);
  return cfg.eta_min +
         (cfg.lr0 - cfg.eta_min) * (1.0 + std::cos(std::numbers::pi * t / cfg.t_max)) / 2.0;
}

template <typename Scalar>
void adamw_step(ParameterSet<Scalar>& params, OptimizerState<Scalar>& state,
                const AdamWParams& hp) {
  auto& entries = params.entries();
  if (state.m.size() != entries.size()) {
    state.m.clear();
    state.v.clear();
    for (const auto& e : entries) {
      state.m.emplace_back(e.tensor.numel(), Scalar(0));
      state.v.emplace_back(e.tensor.numel(), Scalar(0));
    }
  }
  for (const auto& e : entries)
    for (Scalar g : e.tensor.grad)
      if (!std::isfinite(static_cast<double>(g)))
        throw Error("diverged", "non-finite gradient in " + e.name + " at step " +
                                    std::to_string(state.step + 1));

  const auto t = static_cast<double>(++state.step);
  const double c1 = 1.0 - std::pow(hp.beta1, t);
  const double c2 = 1.0 - std::pow(hp.beta2, t);
  for (std::size_t k = 0; k < entries.size(); ++k) {
    auto& p = entries[k].tensor;
    auto& m = state.m[k];
    auto& v = state.v[k];
    const bool has = p.has_grad();
    for (Index i = 0; i < p.numel(); ++i) {
      const double g = has ? static_cast<double>(p.grad[i]) : 0.0;
      double w = static_cast<double>(p[i]);
      w -= hp.lr * hp.weight_decay * w;
      const double mi = hp.beta1 * static_cast<double>(m[i]) + (1.0 - hp.beta1) * g;
      const double vi = hp.beta2 * static_cast<double>(v[i]) + (1.0 - hp.beta2) * g * g;
      m[i] = static_cast<Scalar>(mi);
      v[i] = static_cast<Scalar>(vi);
      w -= hp.lr * (mi / c1) / (std::sqrt(vi / c2) + hp.eps);
      p[i] = static_cast<Scalar>(w);
    }
  }
}

template void adamw_step(ParameterSet<float>&, OptimizerState<float>&, const AdamWParams&);
template void adamw_step(ParameterSet<double>&, OptimizerState<double>&, const AdamWParams&);

nlohmann::ordered_json MetricsRecord::to_json() const {
  nlohmann::ordered_json j;
  j["epoch"] = epoch;
  j["split"] = split;
  j["loss"] = loss;
  j["dsc"] = dsc ? nlohmann::ordered_json(*dsc) : nullptr;
  j["lr"] = lr;
  j["wallclock"] = wallclock;
  return j;
}

Checkpoint make_checkpoint(ModelKind kind, const NetConfig& cfg, const ParameterSet<float>& params) {
  Checkpoint c;
  c.kind = kind;
  c.config = cfg;
  c.params = params;
  for (auto& e : c.params.entries()) {
    e.tensor.grad.clear();
    e.tensor.requires_grad = false;
  }
  return c;
}

// ---------------------------------------------------------------------------
// Data

std::vector<PhantomCase> make_phantom_suite(const std::vector<ShapeFamily>& families, int n,
                                            std::uint64_t seed, const PhantomGeometry& geometry) {
  if (families.empty()) throw std::invalid_argument("make_phantom_suite: no families");
  std::mt19937_64 rng(seed);
  std::vector<PhantomCase> out;
  for (int i = 0; i < n; ++i) {
    const ShapeFamily f = families[static_cast<std::size_t>(i) % families.size()];
    PhantomCase c;
    c.spec = random_phantom_spec(f, geometry, rng);
    char id[64];
    std::snprintf(id, sizeof id, "%s_%04d", family_name(f), i);
    c.id = id;
    std::tie(c.volume, c.mask) = generate_phantom(c.spec, geometry.dims, geometry.spacing);
    out.push_back(std::move(c));
  }
  return out;
}

void save_phantom_suite(const std::vector<PhantomCase>& cases, const std::string& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json manifest;
  manifest["cases"] = nlohmann::ordered_json::array();
  for (const auto& c : cases) {
    write_volume(c.volume, dir + "/" + c.id + ".pvol");
    write_volume(c.mask, dir + "/" + c.id + "_mask.pvol");
    manifest["cases"].push_back({{"id", c.id}, {"spec", c.spec.to_json()}});
  }
  write_file(dir + "/manifest.json", manifest.dump(2) + "\n");
}

std::vector<PhantomCase> load_phantom_suite(const std::string& dir) {
  const std::string path = dir + "/manifest.json";
  if (!std::filesystem::exists(path)) throw Error("not_found", "no manifest at " + path);
  const auto manifest = nlohmann::json::parse(read_file(path));
  std::vector<PhantomCase> out;
  for (const auto& e : manifest.at("cases")) {
    PhantomCase c;
    c.id = e.at("id").get<std::string>();
    c.spec = PhantomSpec::from_json(e.at("spec"));
    c.volume = read_volume<float>(dir + "/" + c.id + ".pvol");
    c.mask = read_volume<std::uint8_t>(dir + "/" + c.id + "_mask.pvol");
    out.push_back(std::move(c));
  }
  return out;
}

namespace {

struct SliceRef {
  std::size_t case_index;
  Index slice;
};

std::vector<SliceRef> eligible_slices(const std::vector<PhantomCase>& cases, Axis axis,
                                      const std::function<bool(const PhantomCase&, Index)>& ok) {
  std::vector<SliceRef> refs;
  for (std::size_t c = 0; c < cases.size(); ++c) {
    const auto areas = slice_areas(cases[c].mask, axis);
    for (Index s = 0; s < static_cast<Index>(areas.size()); ++s)
      if (areas[s] > kMinForegroundPixels && ok(cases[c], s)) refs.push_back({c, s});
  }
  if (refs.empty()) throw Error("empty_dataset", "no slice has enough foreground");
  return refs;
}

}  // namespace

std::vector<RoiSample> build_roi_pool(const std::vector<PhantomCase>& cases, int n,
                                      const RoiConfig& cfg, std::uint64_t seed, Axis axis) {
  const auto refs = eligible_slices(cases, axis, [](const PhantomCase&, Index) { return true; });
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, refs.size() - 1);
  std::vector<RoiSample> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const auto& r = refs[pick(rng)];
    const auto& c = cases[r.case_index];
    auto s = build_roi_sample(c.volume, c.mask, axis, r.slice, cfg, rng);
    s->volume_id = c.id;
    out.push_back(std::move(*s));
  }
  return out;
}

std::vector<PropagationTask> build_task_pool(const std::vector<PhantomCase>& cases, int n,
                                             const TaskConfig& cfg, std::uint64_t seed,
                                             Axis axis) {
  const auto refs = eligible_slices(cases, axis, [&](const PhantomCase& c, Index s) {
    const auto offsets = candidate_offsets(s, c.volume.slice_count(axis),
                                           c.volume.spacing[static_cast<int>(axis)],
                                           cfg.thickness_mm);
    return static_cast<int>(offsets.size()) >= cfg.n_adjacent;
  });
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, refs.size() - 1);
  std::vector<PropagationTask> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const auto& r = refs[pick(rng)];
    const auto& c = cases[r.case_index];
    out.push_back(build_roi_task(c.volume, c.mask, axis, r.slice, cfg, rng));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training

namespace {

using Clock = std::chrono::steady_clock;

template <typename Image_>
Tensor<float> pack_masks(const std::vector<Image_>& masks) {
  return pack_images<float>(masks, 1);
}

struct EvalResult {
  double loss = 0;
  double dsc = 0;
};

EvalResult eval_box2mask(Box2MaskNet<float>& net, const std::vector<RoiSample>& samples) {
  EvalResult r;
  if (samples.empty()) return r;
  constexpr std::size_t kChunk = 16;
  double loss = 0, dsc_sum = 0;
  for (std::size_t start = 0; start < samples.size(); start += kChunk) {
    const std::size_t end = std::min(samples.size(), start + kChunk);
    std::vector<Image> imgs;
    std::vector<Mask2D> targets;
    for (std::size_t i = start; i < end; ++i) {
      imgs.push_back(samples[i].image);
      targets.push_back(samples[i].target);
    }
    Graph<float> g(false);
    const auto outs = net.forward(g, g.input(pack_images<float>(imgs, 3)));
    loss += box2mask_loss(outs, pack_masks(targets)).value()[0] * static_cast<double>(end - start);
    const auto& p = outs[0].value();
    const Index r2 = p.dim(2) * p.dim(3);
    for (std::size_t i = 0; i < targets.size(); ++i) {
      Image prob(p.dim(2), p.dim(3));
      std::copy_n(p.data() + static_cast<Index>(i) * r2, r2, prob.data());
      dsc_sum += dsc(threshold(prob), targets[i]);
    }
  }
  r.loss = loss / static_cast<double>(samples.size());
  r.dsc = dsc_sum / static_cast<double>(samples.size());
  return r;
}

EvalResult eval_propmask(PropMaskNet<float>& net, const std::vector<PropagationTask>& tasks) {
  EvalResult r;
  if (tasks.empty()) return r;
  double loss = 0, dsc_sum = 0;
  std::size_t slices = 0;
  for (const auto& t : tasks) {
    const auto feats = net.encode_guide(t.guide_image, t.guide_mask.cast<float>());
    const auto probs = net.predict(feats, t.adjacent_images);
    double overlap = 0, denom = 1e-6;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      const Image m = t.adjacent_targets[i].cast<float>();
      overlap += (probs[i] * m).cast<double>().sum();
      denom += probs[i].cast<double>().square().sum() + m.cast<double>().square().sum();
      dsc_sum += dsc(threshold(probs[i]), t.adjacent_targets[i]);
      ++slices;
    }
    loss += 1.0 - 2.0 * overlap / denom;
  }
  r.loss = loss / static_cast<double>(tasks.size());
  r.dsc = dsc_sum / static_cast<double>(slices);
  return r;
}

template <typename Net, typename Sample, typename LossFn, typename EvalFn>
TrainResult run_training(Net& net, ModelKind kind, const NetConfig& nc,
                         const std::vector<Sample>& train, const std::vector<Sample>& val,
                         const TrainConfig& cfg, const Checkpoint* init, const LogSink& sink,
                         const AugmentPolicy& policy, LossFn batch_loss, EvalFn evaluate) {
  cfg.validate();
  if (train.empty()) throw Error("empty_dataset", "training pool is empty");
  if (init) {
    if (init->kind != kind) throw Error("checkpoint_mismatch", "checkpoint is for another model");
    if (!(init->config == nc))
      throw Error("checkpoint_mismatch", "checkpoint configuration differs from the network");
    assign_parameters(net.params(), init->params);
  }

  auto& params = net.params();
  params.set_requires_grad(true);
  OptimizerState<float> state;
  std::mt19937_64 rng(cfg.seed ^ 0xa0761d6478bd642full);
  std::uniform_int_distribution<std::size_t> pick(0, train.size() - 1);
  TrainResult result;
  const auto t0 = Clock::now();
  auto emit = [&](MetricsRecord rec) {
    rec.wallclock = std::chrono::duration<double>(Clock::now() - t0).count();
    if (sink) sink(rec);
    result.log.push_back(std::move(rec));
  };

  std::optional<ParameterSet<float>> best;
  double best_dsc = -1;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cosine_lr(epoch, cfg);
    const AdamWParams hp{lr, cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.adam_eps};
    double loss_sum = 0;
    for (int done = 0; done < cfg.samples_per_epoch;) {
      const int n = std::min(cfg.batch, cfg.samples_per_epoch - done);
      std::vector<Sample> batch;
      batch.reserve(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) batch.push_back(augment(train[pick(rng)], rng, policy));
      Graph<float> g;
      const auto loss = batch_loss(g, batch);
      const double lv = loss.value()[0];
      if (!std::isfinite(lv))
        throw Error("diverged", "loss is " + std::to_string(lv) + " at epoch " +
                                    std::to_string(epoch + 1));
      params.zero_grad();
      g.backward(loss);
      adamw_step(params, state, hp);
      loss_sum += lv * n;
      done += n;
    }
    emit({epoch + 1, "train", loss_sum / cfg.samples_per_epoch, std::nullopt, lr, 0});

    if ((epoch + 1) % cfg.eval_interval == 0 || epoch + 1 == cfg.epochs) {
      if (!val.empty()) {
        const EvalResult ev = evaluate(net, val);
        emit({epoch + 1, "val", ev.loss, ev.dsc, lr, 0});
        if (cfg.keep_best && ev.dsc > best_dsc) {
          best_dsc = ev.dsc;
          best = params;
        }
      }
    }
  }

  result.checkpoint = make_checkpoint(kind, nc, best ? *best : params);
  if (init) {
    result.checkpoint.finetuned = true;
    result.checkpoint.base_hash = init->hash();
  }
  params.set_requires_grad(false);
  for (auto& e : params.entries()) e.tensor.grad.clear();
  return result;
}

}  // namespace

TrainResult train_box2mask(const std::vector<RoiSample>& train, const std::vector<RoiSample>& val,
                           const NetConfig& nc, const TrainConfig& cfg, const Checkpoint* init,
                           const LogSink& sink) {
  Box2MaskNet<float> net(nc, cfg.seed);
  auto loss = [&net](Graph<float>& g, const std::vector<RoiSample>& batch) {
    std::vector<Image> imgs;
    std::vector<Mask2D> targets;
    for (const auto& s : batch) {
      imgs.push_back(s.image);
      targets.push_back(s.target);
    }
    const auto outs = net.forward(g, g.input(pack_images<float>(imgs, 3)));
    return box2mask_loss(outs, pack_masks(targets));
  };
  return run_training(net, ModelKind::kBox2Mask, nc, train, val, cfg, init, sink,
                      AugmentPolicy::box2mask(), loss, eval_box2mask);
}

TrainResult train_propmask(const std::vector<PropagationTask>& train,
                           const std::vector<PropagationTask>& val, const NetConfig& nc,
                           const TrainConfig& cfg, const Checkpoint* init, const LogSink& sink) {
  PropMaskNet<float> net(nc, cfg.seed);
  auto loss = [&net](Graph<float>& g, const std::vector<PropagationTask>& batch) {
    std::vector<Image> guides, adjacent;
    std::vector<Mask2D> prompts, targets;
    const std::size_t n = batch.front().adjacent_images.size();
    for (const auto& t : batch) {
      if (t.adjacent_images.size() != n)
        throw Error("bad_task", "tasks in a batch must have equal adjacent counts");
      guides.push_back(t.guide_image);
      prompts.push_back(t.guide_mask);
      adjacent.insert(adjacent.end(), t.adjacent_images.begin(), t.adjacent_images.end());
      targets.insert(targets.end(), t.adjacent_targets.begin(), t.adjacent_targets.end());
    }
    const auto p = net.forward(g, g.input(pack_images<float>(guides, 3)),
                               g.input(pack_masks(prompts)),
                               g.input(pack_images<float>(adjacent, 3)));
    return propmask_loss(p, pack_masks(targets));
  };
  return run_training(net, ModelKind::kPropMask, nc, train, val, cfg, init, sink,
                      AugmentPolicy::propmask(), loss, eval_propmask);
}

std::unique_ptr<Box2MaskNet<float>> box2mask_from(const Checkpoint& ckpt) {
  if (ckpt.kind != ModelKind::kBox2Mask)
    throw Error("checkpoint_mismatch", "expected a box2mask checkpoint");
  auto net = std::make_unique<Box2MaskNet<float>>(ckpt.config, 0);
  assign_parameters(net->params(), ckpt.params);
  return net;
}

std::unique_ptr<PropMaskNet<float>> propmask_from(const Checkpoint& ckpt) {
  if (ckpt.kind != ModelKind::kPropMask)
    throw Error("checkpoint_mismatch", "expected a propmask checkpoint");
  auto net = std::make_unique<PropMaskNet<float>>(ckpt.config, 0);
  assign_parameters(net->params(), ckpt.params);
  return net;
}

double evaluate_box2mask(Box2MaskNet<float>& net, const std::vector<RoiSample>& samples) {
  return eval_box2mask(net, samples).dsc;
}

double evaluate_propmask(PropMaskNet<float>& net, const std::vector<PropagationTask>& tasks) {
  return eval_propmask(net, tasks).dsc;
}

}  // namespace pam
