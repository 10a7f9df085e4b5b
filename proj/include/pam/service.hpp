#pragma once

#include "pam/engine.hpp"

#include <json.hpp>

#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>

namespace httplib {
class Server;
}

namespace pam {

inline constexpr int kSchemaVersion = 1;

struct Engines {
  std::unique_ptr<BoxSegmenter> boxes;
  std::unique_ptr<SlicePropagator> propagator;
};

/// Builds the segmenters for one job. `truth` is the registered ground truth,
/// if any.
using EngineFactory = std::function<Engines(const VolumeF& volume, const Mask3D* truth)>;

/// Shared read-only networks.
EngineFactory network_engines(std::shared_ptr<Box2MaskNet<float>> box,
                              std::shared_ptr<PropMaskNet<float>> prop);
/// Ground-truth stubs; jobs fail with no_groundtruth when none is registered.
EngineFactory oracle_engines();

enum class JobStatus { kQueued, kRunning, kDone, kFailed };
const char* job_status_name(JobStatus s);

struct Job {
  std::string id;
  std::string volume_id;
  nlohmann::json prompt;
  EngineConfig config;
  JobStatus status = JobStatus::kQueued;
  std::shared_ptr<const Mask3D> mask;
  std::optional<RunReport> report;
  std::optional<double> dsc;
  std::string error_code;
  std::string error_message;

  nlohmann::ordered_json to_json() const;
};

struct Response {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

/// Transport-independent handlers. Jobs run synchronously inside
/// create_segmentation; one job per volume at a time.
class Service {
 public:
  explicit Service(EngineFactory engines);

  Response upload_volume(std::string_view pvol);
  Response volume_meta(const std::string& id) const;
  Response slice_png(const std::string& id, const std::string& axis, const std::string& index,
                     const std::string& window) const;
  Response upload_groundtruth(const std::string& id, std::string_view pvol);
  Response create_segmentation(const std::string& id, std::string_view body);
  Response job(const std::string& id) const;
  Response job_mask(const std::string& id, const std::string& axis, const std::string& index) const;

  /// Result volume of a done job.
  std::shared_ptr<const Mask3D> job_result(const std::string& id) const;

 private:
  struct Stored {
    std::shared_ptr<const VolumeF> volume;
    std::shared_ptr<const Mask3D> truth;
    std::shared_ptr<std::mutex> run_lock;
  };

  std::optional<Stored> find_volume(const std::string& id) const;
  std::optional<Job> find_job(const std::string& id) const;
  void store_job(const Job& job);

  EngineFactory engines_;
  mutable std::mutex mutex_;
  std::map<std::string, Stored> volumes_;
  std::map<std::string, Job> jobs_;
  std::uint64_t next_job_ = 1;
};

/// Routes under /api onto `service`.
void mount(Service& service, httplib::Server& server);

/// Content hash used as the volume id.
std::string content_id(std::string_view bytes);

}  // namespace pam
