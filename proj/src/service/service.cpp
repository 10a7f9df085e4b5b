#include "pam/service.hpp"

#include "pam/checkpoint.hpp"
#include "pam/metrics.hpp"
#include "pam/png.hpp"
#include "pam/rle.hpp"

#include <charconv>
#include <cstdio>

namespace pam {

namespace {

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

int http_status(const std::string& code) {
  if (code == "not_found") return 404;
  if (code == "busy") return 409;
  if (code.rfind("bad_", 0) == 0 || code == "truncated" || code == "invalid_volume" ||
      code == "shape_mismatch")
    return 400;
  return 500;
}

Response json_response(nlohmann::ordered_json body, int status = 200) {
  nlohmann::ordered_json j;
  j["schema_version"] = kSchemaVersion;
  for (auto& [k, v] : body.items()) j[k] = std::move(v);
  return {status, "application/json", j.dump()};
}

Response error_response(const std::string& code, const std::string& message) {
  return json_response({{"code", code}, {"message", message}}, http_status(code));
}

Response error_response(const Error& e) {
  std::string msg = e.what();
  const std::string prefix = e.code() + ": ";
  if (msg.rfind(prefix, 0) == 0) msg.erase(0, prefix.size());
  return error_response(e.code(), msg);
}

Index parse_index(const std::string& s) {
  Index v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw Error("bad_index", "not an index: " + s);
  return v;
}

Axis parse_axis_arg(const std::string& s) {
  try {
    return parse_axis(s);
  } catch (const std::exception&) {
    throw Error("bad_axis", "axis must be x, y or z");
  }
}

void check_slice(Index i, Index count) {
  if (i < 0 || i >= count)
    throw Error("not_found", "slice " + std::to_string(i) + " outside [0, " +
                                 std::to_string(count) + ")");
}

template <typename F>
Response guarded(F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    return error_response(e);
  } catch (const nlohmann::json::exception& e) {
    return error_response("bad_json", e.what());
  } catch (const std::exception& e) {
    return error_response("internal", e.what());
  }
}

class SharedBoxSegmenter : public BoxSegmenter {
 public:
  explicit SharedBoxSegmenter(std::shared_ptr<Box2MaskNet<float>> net)
      : net_(std::move(net)), inner_(*net_) {}
  InitialMask segment(const VolumeF& v, Axis a, Index s, const Box2D& b) override {
    return inner_.segment(v, a, s, b);
  }

 private:
  std::shared_ptr<Box2MaskNet<float>> net_;
  NetworkBoxSegmenter inner_;
};

class SharedPropagator : public SlicePropagator {
 public:
  explicit SharedPropagator(std::shared_ptr<PropMaskNet<float>> net)
      : net_(std::move(net)), inner_(*net_) {}
  std::vector<Mask2D> propagate(const VolumeF& v, const RoundRequest& r) override {
    return inner_.propagate(v, r);
  }

 private:
  std::shared_ptr<PropMaskNet<float>> net_;
  NetworkPropagator inner_;
};

class OwningOracleBox : public BoxSegmenter {
 public:
  explicit OwningOracleBox(Mask3D truth) : truth_(std::move(truth)), inner_(truth_) {}
  InitialMask segment(const VolumeF& v, Axis a, Index s, const Box2D& b) override {
    return inner_.segment(v, a, s, b);
  }

 private:
  Mask3D truth_;
  OracleBoxSegmenter inner_;
};

class OwningOracleProp : public SlicePropagator {
 public:
  explicit OwningOracleProp(Mask3D truth) : truth_(std::move(truth)), inner_(truth_) {}
  std::vector<Mask2D> propagate(const VolumeF& v, const RoundRequest& r) override {
    return inner_.propagate(v, r);
  }

 private:
  Mask3D truth_;
  OraclePropagator inner_;
};

}  // namespace

std::string content_id(std::string_view bytes) { return hash_hex(fnv1a(bytes)); }

EngineFactory network_engines(std::shared_ptr<Box2MaskNet<float>> box,
                              std::shared_ptr<PropMaskNet<float>> prop) {
  return [box, prop](const VolumeF&, const Mask3D*) {
    return Engines{std::make_unique<SharedBoxSegmenter>(box),
                   std::make_unique<SharedPropagator>(prop)};
  };
}

EngineFactory oracle_engines() {
  return [](const VolumeF&, const Mask3D* truth) {
    if (!truth) throw Error("no_groundtruth", "oracle engines need a registered ground truth");
    return Engines{std::make_unique<OwningOracleBox>(*truth),
                   std::make_unique<OwningOracleProp>(*truth)};
  };
}

const char* job_status_name(JobStatus s) {
  switch (s) {
    case JobStatus::kQueued: return "queued";
    case JobStatus::kRunning: return "running";
    case JobStatus::kDone: return "done";
    case JobStatus::kFailed: return "failed";
  }
  return "unknown";
}

nlohmann::ordered_json Job::to_json() const {
  nlohmann::ordered_json j;
  j["schema_version"] = kSchemaVersion;
  j["job_id"] = id;
  j["volume_id"] = volume_id;
  j["status"] = job_status_name(status);
  j["prompt"] = prompt;
  j["config"] = config.to_json();
  j["report"] = report ? report->to_json() : nlohmann::ordered_json(nullptr);
  j["dsc"] = dsc ? nlohmann::ordered_json(*dsc) : nlohmann::ordered_json(nullptr);
  if (status == JobStatus::kFailed)
    j["error"] = {{"code", error_code}, {"message", error_message}};
  return j;
}

Service::Service(EngineFactory engines) : engines_(std::move(engines)) {}

std::optional<Service::Stored> Service::find_volume(const std::string& id) const {
  std::lock_guard lock(mutex_);
  const auto it = volumes_.find(id);
  if (it == volumes_.end()) return std::nullopt;
  return it->second;
}

std::optional<Job> Service::find_job(const std::string& id) const {
  std::lock_guard lock(mutex_);
  const auto it = jobs_.find(id);
  if (it == jobs_.end()) return std::nullopt;
  return it->second;
}

void Service::store_job(const Job& job) {
  std::lock_guard lock(mutex_);
  jobs_[job.id] = job;
}

Response Service::upload_volume(std::string_view pvol) {
  return guarded([&] {
    if (peek_dtype(pvol) != "f32") throw Error("bad_volume", "expected an f32 volume");
    auto volume = std::make_shared<const VolumeF>(decode_volume<float>(pvol));
    const std::string id = content_id(pvol);
    {
      std::lock_guard lock(mutex_);
      if (!volumes_.count(id))
        volumes_[id] = Stored{std::move(volume), nullptr, std::make_shared<std::mutex>()};
    }
    return json_response({{"volume_id", id}}, 201);
  });
}

Response Service::volume_meta(const std::string& id) const {
  return guarded([&] {
    const auto v = find_volume(id);
    if (!v) throw Error("not_found", "no volume " + id);
    const auto& vol = *v->volume;
    const auto fp = fingerprint(vol);
    return json_response({{"volume_id", id},
                          {"dims", vol.dims},
                          {"spacing", vol.spacing},
                          {"dtype", "f32"},
                          {"has_groundtruth", v->truth != nullptr},
                          {"size_anisotropy", fp.size_anisotropy},
                          {"spacing_anisotropy", fp.spacing_anisotropy}});
  });
}

Response Service::slice_png(const std::string& id, const std::string& axis,
                            const std::string& index, const std::string& window) const {
  return guarded([&] {
    const auto v = find_volume(id);
    if (!v) throw Error("not_found", "no volume " + id);
    const Axis a = parse_axis_arg(axis);
    const Index i = parse_index(index);
    check_slice(i, v->volume->slice_count(a));
    return Response{200, "image/png", encode_png(window_slice(v->volume->slice(a, i), window))};
  });
}

Response Service::upload_groundtruth(const std::string& id, std::string_view pvol) {
  return guarded([&] {
    if (peek_dtype(pvol) != "u8") throw Error("bad_volume", "expected a u8 mask volume");
    auto truth = std::make_shared<const Mask3D>(decode_volume<std::uint8_t>(pvol));
    std::lock_guard lock(mutex_);
    const auto it = volumes_.find(id);
    if (it == volumes_.end()) throw Error("not_found", "no volume " + id);
    if (truth->dims != it->second.volume->dims)
      throw Error("shape_mismatch", "ground truth dims differ from the volume");
    it->second.truth = std::move(truth);
    return json_response({{"volume_id", id}, {"has_groundtruth", true}});
  });
}

Response Service::create_segmentation(const std::string& id, std::string_view body) {
  return guarded([&] {
    const auto v = find_volume(id);
    if (!v) throw Error("not_found", "no volume " + id);
    const auto req = nlohmann::json::parse(body);
    if (!req.is_object() || !req.contains("prompt"))
      throw Error("bad_request", "body must be {\"prompt\": ..., \"config\": ...}");

    Job job;
    {
      std::lock_guard lock(mutex_);
      char buf[32];
      std::snprintf(buf, sizeof buf, "job-%06llu", static_cast<unsigned long long>(next_job_++));
      job.id = buf;
    }
    job.volume_id = id;
    job.prompt = req["prompt"];
    store_job(job);

    std::lock_guard run(*v->run_lock);
    job.status = JobStatus::kRunning;
    store_job(job);
    try {
      job.config = EngineConfig::from_json(req.value("config", nlohmann::json::object()));
      const Prompt prompt = parse_prompt(job.prompt, *v->volume);
      Engines engines = engines_(*v->volume, v->truth.get());
      auto result = segment_volume(*v->volume, prompt, *engines.boxes, *engines.propagator,
                                   job.config);
      if (v->truth) job.dsc = dsc(result.mask, *v->truth);
      job.report = std::move(result.report);
      job.mask = std::make_shared<const Mask3D>(std::move(result.mask));
      job.status = JobStatus::kDone;
    } catch (const Error& e) {
      job.status = JobStatus::kFailed;
      job.error_code = e.code();
      job.error_message = e.what();
    } catch (const std::exception& e) {
      job.status = JobStatus::kFailed;
      job.error_code = "internal";
      job.error_message = e.what();
    }
    store_job(job);
    return json_response({{"job_id", job.id}, {"status", job_status_name(job.status)}}, 202);
  });
}

Response Service::job(const std::string& id) const {
  return guarded([&] {
    const auto j = find_job(id);
    if (!j) throw Error("not_found", "no job " + id);
    return Response{200, "application/json", j->to_json().dump()};
  });
}

Response Service::job_mask(const std::string& id, const std::string& axis,
                           const std::string& index) const {
  return guarded([&] {
    const auto j = find_job(id);
    if (!j) throw Error("not_found", "no job " + id);
    if (j->status != JobStatus::kDone)
      throw Error("not_found", "job " + id + " is " + job_status_name(j->status));
    const Axis a = parse_axis_arg(axis);
    const Index i = parse_index(index);
    check_slice(i, j->mask->slice_count(a));
    auto body = rle_to_json(rle_encode(j->mask->slice(a, i)));
    body["axis"] = axis_name(a);
    body["slice"] = i;
    return json_response(std::move(body));
  });
}

std::shared_ptr<const Mask3D> Service::job_result(const std::string& id) const {
  const auto j = find_job(id);
  return j ? j->mask : nullptr;
}

}  // namespace pam
