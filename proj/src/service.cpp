#include "mmc/service.hpp"

#include <algorithm>
#include <iomanip>
#include <mutex>
#include <random>
#include <sstream>

#include "httplib.h"
#include "mmc/errors.hpp"
#include "mmc/image_io.hpp"

namespace mmc {

namespace {

HttpReply error(int status, const std::string& reason) { return {status, {{"error", reason}}}; }

double ms_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

nlohmann::json segment_payload(const PointSegmentation& seg) {
    const auto& mask = seg.mask;
    return {{"grid_h", mask.grid_h},
            {"grid_w", mask.grid_w},
            {"mask_rle", rle_encode(mask.cells)},
            {"heatmap", seg.heatmap.values},
            {"threshold", mask.threshold},
            {"query", {{"row", mask.query.row}, {"col", mask.query.col}}},
            {"area", mask.area()}};
}

SegmentationService::SegmentationService(std::shared_ptr<const VisionTransformer> model, std::string checkpoint_hash, ServiceConfig cfg)
    : model_(std::move(model)), checkpoint_hash_(std::move(checkpoint_hash)), cfg_(cfg) {
    if (!model_ || !model_->initialized()) throw StateError("service needs an initialized model");
    if (cfg_.resolution <= 0 || cfg_.resolution % model_->config().patch_size != 0)
        throw InvalidInput("service resolution must be a positive multiple of the patch size");
}

HttpReply SegmentationService::create_session(std::string_view payload) {
    const auto t0 = std::chrono::steady_clock::now();
    if (payload.empty()) return error(400, "empty image payload");
    if (payload.size() > cfg_.max_upload_bytes)
        return error(413, "image payload exceeds " + std::to_string(cfg_.max_upload_bytes) + " bytes");
    ImageTensor image;
    try {
        image = decode_image({reinterpret_cast<const std::uint8_t*>(payload.data()), payload.size()});
    } catch (const InvalidInput& e) {
        return error(415, e.what());
    }
    auto record = std::make_shared<SessionRecord>();
    record->features = encode_at_resolution(*model_, image, cfg_.resolution);
    ++encodes_;
    record->source_width = image.width;
    record->source_height = image.height;
    record->created = std::chrono::steady_clock::now();
    {
        std::random_device rd;
        std::ostringstream id;
        id << std::hex << std::setfill('0') << std::setw(16) << ((static_cast<std::uint64_t>(rd()) << 32) ^ rd()) << std::setw(8)
           << counter_++;
        record->id = id.str();
    }
    expire_sessions();
    {
        std::unique_lock lock(mutex_);
        if (sessions_.size() >= cfg_.max_sessions) {
            // evict the oldest session
            auto oldest = std::min_element(sessions_.begin(), sessions_.end(),
                                           [](const auto& a, const auto& b) { return a.second->created < b.second->created; });
            sessions_.erase(oldest);
        }
        sessions_[record->id] = record;
    }
    return {200,
            {{"session", record->id},
             {"width", image.width},
             {"height", image.height},
             {"grid_h", record->features.grid_h},
             {"grid_w", record->features.grid_w},
             {"timing", {{"encode_ms", ms_since(t0)}}}}};
}

std::shared_ptr<const SessionRecord> SegmentationService::find(const std::string& id) const {
    std::shared_lock lock(mutex_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) return nullptr;
    if (std::chrono::steady_clock::now() - it->second->created > cfg_.session_ttl) return nullptr;
    return it->second;
}

HttpReply SegmentationService::segment(std::string_view request_body) {
    const auto t0 = std::chrono::steady_clock::now();
    nlohmann::json req;
    try {
        req = nlohmann::json::parse(request_body);
    } catch (const nlohmann::json::exception&) {
        return error(400, "request body is not valid JSON");
    }
    if (!req.is_object() || !req.contains("session") || !req["session"].is_string()) return error(400, "missing 'session'");
    for (const char* k : {"x", "y", "threshold"})
        if (!req.contains(k) || !req[k].is_number()) return error(400, std::string("missing numeric '") + k + "'");
    if (!req["x"].is_number_integer() || !req["y"].is_number_integer()) return error(400, "'x' and 'y' must be integers");
    auto session = find(req["session"].get<std::string>());
    if (!session) return error(404, "unknown or expired session");
    const long long x = req["x"].get<long long>(), y = req["y"].get<long long>();
    const double t = req["threshold"].get<double>();
    if (x < 0 || y < 0 || x >= session->source_width || y >= session->source_height) return error(422, "point outside the image");
    if (!(t >= -1.0 && t <= 1.0)) return error(422, "threshold must be in [-1, 1]");
    const PointSegmentation seg = segment_features(session->features, static_cast<int>(x), static_cast<int>(y), session->source_width,
                                                   session->source_height, static_cast<float>(t), cfg_.resolution,
                                                   model_->config().patch_size);
    nlohmann::json body = segment_payload(seg);
    body["session"] = session->id;
    body["timing"] = {{"segment_ms", ms_since(t0)}, {"encode_count", encode_count()}};
    return {200, std::move(body)};
}

HttpReply SegmentationService::health() const {
    return {200,
            {{"status", "ok"},
             {"checkpoint_hash", checkpoint_hash_},
             {"resolution", cfg_.resolution},
             {"sessions", session_count()},
             {"encode_count", encode_count()}}};
}

std::size_t SegmentationService::session_count() const {
    std::shared_lock lock(mutex_);
    return sessions_.size();
}

std::size_t SegmentationService::expire_sessions() {
    const auto now = std::chrono::steady_clock::now();
    std::unique_lock lock(mutex_);
    return std::erase_if(sessions_, [&](const auto& kv) { return now - kv.second->created > cfg_.session_ttl; });
}

void SegmentationService::bind(httplib::Server& server) {
    auto send = [](httplib::Response& res, const HttpReply& reply) {
        res.status = reply.status;
        res.set_header("Access-Control-Allow-Origin", "*");
        res.set_content(reply.body.dump(), "application/json");
    };
    server.set_payload_max_length(cfg_.max_upload_bytes + (1u << 20));
    server.Post("/session", [this, send](const httplib::Request& req, httplib::Response& res) { send(res, create_session(req.body)); });
    server.Post("/segment", [this, send](const httplib::Request& req, httplib::Response& res) { send(res, segment(req.body)); });
    server.Get("/health", [this, send](const httplib::Request&, httplib::Response& res) { send(res, health()); });
    server.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) {
        res.set_header("Access-Control-Allow-Origin", "*");
        res.set_header("Access-Control-Allow-Headers", "Content-Type");
        res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
        res.status = 204;
    });
    server.set_exception_handler([send](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
        try {
            std::rethrow_exception(ep);
        } catch (const InvalidInput& e) {
            send(res, error(400, e.what()));
        } catch (const std::exception& e) {
            send(res, error(500, e.what()));
        }
    });
}

}  // namespace mmc
