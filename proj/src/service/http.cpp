#include "pam/service.hpp"

#include <httplib.h>

namespace pam {

namespace {

void send(httplib::Response& res, const Response& r) {
  res.status = r.status;
  res.set_content(r.body, r.content_type);
}

}  // namespace

void mount(Service& service, httplib::Server& server) {
  server.Post("/api/volumes", [&service](const httplib::Request& req, httplib::Response& res) {
    send(res, service.upload_volume(req.body));
  });
  server.Get(R"(/api/volumes/([^/]+)/meta)",
             [&service](const httplib::Request& req, httplib::Response& res) {
               send(res, service.volume_meta(req.matches[1]));
             });
  server.Get(R"(/api/volumes/([^/]+)/slices/([^/]+)/(\d+)\.png)",
             [&service](const httplib::Request& req, httplib::Response& res) {
               const std::string window =
                   req.has_param("window") ? req.get_param_value("window") : "auto";
               send(res, service.slice_png(req.matches[1], req.matches[2], req.matches[3], window));
             });
  server.Post(R"(/api/volumes/([^/]+)/groundtruth)",
              [&service](const httplib::Request& req, httplib::Response& res) {
                send(res, service.upload_groundtruth(req.matches[1], req.body));
              });
  server.Post(R"(/api/volumes/([^/]+)/segmentations)",
              [&service](const httplib::Request& req, httplib::Response& res) {
                send(res, service.create_segmentation(req.matches[1], req.body));
              });
  server.Get(R"(/api/jobs/([^/]+))", [&service](const httplib::Request& req, httplib::Response& res) {
    send(res, service.job(req.matches[1]));
  });
  server.Get(R"(/api/jobs/([^/]+)/masks/([^/]+)/(\d+))",
             [&service](const httplib::Request& req, httplib::Response& res) {
               send(res, service.job_mask(req.matches[1], req.matches[2], req.matches[3]));
             });
  server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (!res.body.empty()) return;
    nlohmann::ordered_json j{{"schema_version", kSchemaVersion},
                             {"code", res.status == 404 ? "not_found" : "http_error"},
                             {"message", "status " + std::to_string(res.status)}};
    res.set_content(j.dump(), "application/json");
  });
}

}  // namespace pam
