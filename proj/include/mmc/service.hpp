#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <shared_mutex>
#include <string>
#include <string_view>

#include "json.hpp"
#include "mmc/prompt_segmentation.hpp"
#include "mmc/vit.hpp"

namespace httplib {
class Server;
}

namespace mmc {

struct ServiceConfig {
    int resolution = 480;
    std::size_t max_upload_bytes = 8u << 20;
    std::chrono::seconds session_ttl{1800};
    std::size_t max_sessions = 1024;
};

struct SessionRecord {
    std::string id;
    FeatureSet features;
    int source_width = 0;
    int source_height = 0;
    std::chrono::steady_clock::time_point created;
};

struct HttpReply {
    int status = 200;
    nlohmann::json body;
};

/// Interactive segmentation backend. Model parameters are a read-only snapshot shared by all requests;
/// the session store is guarded by a shared mutex. Handlers are transport-independent so they can be
/// exercised without sockets; bind() mounts them on an HTTP server.
class SegmentationService {
  public:
    SegmentationService(std::shared_ptr<const VisionTransformer> model, std::string checkpoint_hash, ServiceConfig cfg = {});

    /// POST /session: raw encoded image bytes -> {"session", "width", "height", "grid_h", "grid_w"}.
    HttpReply create_session(std::string_view payload);
    /// POST /segment: {"session", "x", "y", "threshold"} -> mask RLE, heatmap, threshold, query, timing.
    HttpReply segment(std::string_view request_body);
    /// GET /health.
    HttpReply health() const;

    std::size_t encode_count() const { return encodes_.load(); }
    std::size_t session_count() const;
    std::size_t expire_sessions();
    const ServiceConfig& config() const { return cfg_; }

    void bind(httplib::Server& server);

  private:
    std::shared_ptr<const SessionRecord> find(const std::string& id) const;

    std::shared_ptr<const VisionTransformer> model_;
    std::string checkpoint_hash_;
    ServiceConfig cfg_;
    mutable std::shared_mutex mutex_;
    std::map<std::string, std::shared_ptr<const SessionRecord>> sessions_;
    std::atomic<std::size_t> encodes_{0};
    std::atomic<std::uint64_t> counter_{0};
};

/// Body of a /segment reply without its timing field: the part that must be a pure function of the inputs.
nlohmann::json segment_payload(const PointSegmentation& seg);

}  // namespace mmc
