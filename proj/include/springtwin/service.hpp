#pragma once

#include <algorithm>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "springtwin/checkpoint.hpp"
#include "springtwin/model.hpp"
#include "springtwin/scene.hpp"
#include "springtwin/sim.hpp"

namespace springtwin {

struct SessionConfig {
  std::size_t n_attach = 5;
  double drag_speed = 1.0;  // m/s cap on controller motion
  int frame_decimation = 2;  // 60 Hz ticks, 30 Hz frames on the wire
};

/// A structured error that goes back to the client as {type:"error"}.
class ServiceError : public Error {
 public:
  ServiceError(std::string code, const std::string& detail)
      : Error(detail), code_(std::move(code)) {}
  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

struct LiveController {
  std::size_t id = 0;
  Vec3 position = Vec3::Zero();
  Vec3 target = Vec3::Zero();
};

/// One interactive twin. Parameters are predicted once at creation and
/// never change; the state only advances through tick().
class Session {
 public:
  Session(std::string id, const Scene& scene, const Model& model, SessionConfig cfg = {})
      : id_(std::move(id)), cfg_(cfg) {
    if (cfg_.n_attach < 1) throw SchemaError("n_attach", "must be >= 1");
    if (!(cfg_.drag_speed > 0)) throw SchemaError("drag_speed", "must be positive");
    Scene object = scene;
    object.controllers = {};  // scripted controllers are replaced by live ones
    const Twin twin = prepare_twin(object, model);
    params_ = predict(model, twin).params;
    graph_ = twin.graph();
    sim_ = twin.sim;
    initial_ = twin.initial;
    state_ = initial_;
    object_edges_ = graph_.edges.size();
  }

  const std::string& id() const { return id_; }
  const PhysParams& params() const { return params_; }
  const MassState& state() const { return state_; }
  const SpringGraph& graph() const { return graph_; }
  const std::vector<LiveController>& controllers() const { return controllers_; }
  std::size_t tick_index() const { return tick_; }
  double tick_seconds() const { return sim_.dt; }
  bool faulted() const { return fault_.has_value(); }
  bool paused() const { return paused_; }

  json topology() const {
    json pts = json::array(), edges = json::array();
    for (const auto& p : initial_.positions) pts.push_back(quantize(p));
    for (const auto& e : graph_.edges) edges.push_back({e.i, e.j});
    return {{"type", "topology"},
            {"session", id_},
            {"points", pts},
            {"edges", edges},
            {"parts", graph_.part_of}};
  }

  std::size_t add_controller(const Vec3& pos) {
    check_live();
    if (!pos.allFinite()) throw ServiceError("validation", "pos: must be finite");
    const std::size_t id = controllers_.size();
    const auto edges = attach_controllers(state_, std::span<const Vec3>(&pos, 1), cfg_.n_attach,
                                          sim_.rest_length_floor, id);
    graph_.controller_edges.insert(graph_.controller_edges.end(), edges.begin(), edges.end());
    graph_.controller_count = id + 1;
    controllers_.push_back({id, pos, pos});
    return id;
  }

  void drag(std::size_t id, const Vec3& target) {
    check_live();
    if (id >= controllers_.size())
      throw ServiceError("unknown_controller", "no controller with id " + std::to_string(id));
    if (!target.allFinite()) throw ServiceError("validation", "target: must be finite");
    controllers_[id].target = target;
  }

  void pause() {
    check_live();
    paused_ = true;
  }
  void resume() {
    check_live();
    paused_ = false;
  }

  /// Back to the initial state with no controllers.
  void reset() {
    check_live();
    state_ = initial_;
    controllers_.clear();
    graph_.controller_edges.clear();
    graph_.controller_count = 0;
    tick_ = 0;
  }

  /// Advances one frame. Controllers move toward their targets at the
  /// capped speed, interpolated across substeps.
  json tick() {
    check_live();
    const double max_step = cfg_.drag_speed * sim_.dt;
    Points from(controllers_.size()), to(controllers_.size());
    for (std::size_t c = 0; c < controllers_.size(); ++c) {
      auto& ctl = controllers_[c];
      from[c] = ctl.position;
      const Vec3 d = ctl.target - ctl.position;
      const double len = d.norm();
      ctl.position = len <= max_step ? ctl.target : Vec3(ctl.position + d * (max_step / len));
      to[c] = ctl.position;
    }
    Points x = state_.positions, v = state_.velocities, forces, ctrl(controllers_.size());
    try {
      for (int s = 0; s < sim_.substeps; ++s) {
        const double a = static_cast<double>(s + 1) / sim_.substeps;
        for (std::size_t c = 0; c < ctrl.size(); ++c) ctrl[c] = (1.0 - a) * from[c] + a * to[c];
        detail::substep(x, v, state_.masses, graph_, params_, ctrl, sim_, forces);
      }
      detail::check_stable(x, v, sim_, tick_ + 1);
    } catch (const Error& e) {
      fault_ = ServiceError("faulted", e.what());
      throw *fault_;
    }
    state_.positions = std::move(x);
    state_.velocities = std::move(v);
    ++tick_;
    return frame();
  }

  json frame() const {
    json pts = json::array();
    for (const auto& p : state_.positions) pts.push_back(quantize(p));
    return {{"type", "frame"}, {"tick", tick_}, {"positions", pts}};
  }

  static json quantize(const Vec3& p) {
    return json::array({static_cast<float>(p.x()), static_cast<float>(p.y()), static_cast<float>(p.z())});
  }

 private:
  void check_live() const {
    if (fault_) throw *fault_;
  }

  std::string id_;
  SessionConfig cfg_;
  PhysParams params_;
  SpringGraph graph_;
  SimConfig sim_;
  MassState initial_, state_;
  std::size_t object_edges_ = 0;
  std::vector<LiveController> controllers_;
  std::size_t tick_ = 0;
  bool paused_ = false;
  std::optional<ServiceError> fault_;
};

inline json error_message(const std::string& code, const std::string& detail) {
  return {{"type", "error"}, {"code", code}, {"detail", detail}};
}

/// Scene and checkpoint files under a root directory; clients name them by
/// relative path.
class FixtureCatalog {
 public:
  explicit FixtureCatalog(std::filesystem::path root) : root_(std::move(root)) {}

  const std::filesystem::path& root() const { return root_; }

  std::filesystem::path resolve(const std::string& rel) const {
    namespace fs = std::filesystem;
    const fs::path p(rel);
    if (rel.empty() || p.is_absolute())
      throw ServiceError("validation", "fixture path must be relative: '" + rel + "'");
    for (const auto& part : p)
      if (part == "..") throw ServiceError("validation", "fixture path may not leave the root");
    const fs::path full = root_ / p;
    if (!fs::is_regular_file(full)) throw ServiceError("not_found", "no fixture '" + rel + "'");
    return full;
  }

  /// {scenes:[...], checkpoints:[...]} by sniffing each JSON file's keys.
  json listing() const {
    namespace fs = std::filesystem;
    std::vector<std::string> scenes, checkpoints;
    if (fs::is_directory(root_))
      for (const auto& entry : fs::recursive_directory_iterator(root_)) {
        if (!entry.is_regular_file() || entry.path().extension() != ".json") continue;
        const auto rel = fs::relative(entry.path(), root_).generic_string();
        try {
          const json j = io::read_file(entry.path());
          if (j.contains("target_clouds")) scenes.push_back(rel);
          else if (j.contains("edge_decoder")) checkpoints.push_back(rel);
        } catch (const Error&) {
        }
      }
    std::sort(scenes.begin(), scenes.end());
    std::sort(checkpoints.begin(), checkpoints.end());
    return {{"scenes", scenes}, {"checkpoints", checkpoints}};
  }

 private:
  std::filesystem::path root_;
};

/// Message handling for one client connection, independent of transport.
/// Each call returns the replies to send, in order.
class Connection {
 public:
  Connection(const FixtureCatalog& catalog, std::string id, SessionConfig cfg = {})
      : catalog_(catalog), id_(std::move(id)), cfg_(cfg) {}

  std::vector<json> handle_text(const std::string& text) {
    json msg;
    try {
      msg = json::parse(text);
    } catch (const json::exception& e) {
      return {error_message("bad_request", std::string("malformed JSON: ") + e.what())};
    }
    return handle(msg);
  }

  std::vector<json> handle(const json& msg) {
    try {
      if (!msg.is_object() || !msg.contains("type") || !msg["type"].is_string())
        throw ServiceError("bad_request", "message needs a string 'type'");
      const auto type = msg["type"].get<std::string>();
      if (type == "create") return {create(msg)};
      Session& s = live();
      if (type == "add_controller") {
        const auto id = s.add_controller(vec(msg, "pos"));
        return {{{"type", "controller"}, {"id", id}}};
      }
      if (type == "drag") {
        s.drag(index(msg, "id"), vec(msg, "target"));
        return {};
      }
      if (type == "pause") return s.pause(), std::vector<json>{};
      if (type == "resume") return s.resume(), std::vector<json>{};
      if (type == "reset") {
        s.reset();
        return {s.frame()};
      }
      throw ServiceError("bad_request", "unknown message type '" + type + "'");
    } catch (const ServiceError& e) {
      return {error_message(e.code(), e.what())};
    } catch (const ValidationError& e) {
      return {error_message("validation", e.what())};
    } catch (const Error& e) {
      return {error_message("error", e.what())};
    }
  }

  /// Server-driven clock. Returns a frame on every `frame_decimation`-th
  /// tick, an error once when the session faults, nothing otherwise.
  std::optional<json> on_tick() {
    if (!session_ || session_->paused() || reported_fault_) return std::nullopt;
    try {
      json f = session_->tick();
      if (session_->tick_index() % static_cast<std::size_t>(cfg_.frame_decimation) == 0) return f;
      return std::nullopt;
    } catch (const ServiceError& e) {
      reported_fault_ = true;
      return error_message(e.code(), e.what());
    }
  }

  Session* session() { return session_ ? &*session_ : nullptr; }

 private:
  json create(const json& msg) {
    const auto scene_path = catalog_.resolve(str(msg, "scene"));
    const auto ckpt_path = catalog_.resolve(str(msg, "checkpoint"));
    const Scene scene = load_scene(scene_path);
    const Model model = load_checkpoint(ckpt_path);
    // a failed create leaves any existing session untouched
    Session fresh(id_ + "-" + std::to_string(created_ + 1), scene, model, cfg_);
    ++created_;
    session_.emplace(std::move(fresh));
    reported_fault_ = false;
    return session_->topology();
  }

  Session& live() {
    if (!session_) throw ServiceError("no_session", "send 'create' first");
    return *session_;
  }

  static const json& field(const json& msg, const char* key) {
    auto it = msg.find(key);
    if (it == msg.end()) throw ServiceError("bad_request", std::string("missing '") + key + "'");
    return *it;
  }
  static std::string str(const json& msg, const char* key) {
    const auto& v = field(msg, key);
    if (!v.is_string()) throw ServiceError("bad_request", std::string("'") + key + "' must be a string");
    return v.get<std::string>();
  }
  static std::size_t index(const json& msg, const char* key) {
    const auto& v = field(msg, key);
    if (!v.is_number_unsigned()) throw ServiceError("bad_request", std::string("'") + key + "' must be a non-negative integer");
    return v.get<std::size_t>();
  }
  static Vec3 vec(const json& msg, const char* key) {
    const auto& v = field(msg, key);
    if (!v.is_array() || v.size() != 3 ||
        !std::all_of(v.begin(), v.end(), [](const json& x) { return x.is_number(); }))
      throw ServiceError("bad_request", std::string("'") + key + "' must be [x, y, z]");
    return {v[0].get<double>(), v[1].get<double>(), v[2].get<double>()};
  }

  const FixtureCatalog& catalog_;
  std::string id_;
  SessionConfig cfg_;
  std::optional<Session> session_;
  std::size_t created_ = 0;
  bool reported_fault_ = false;
};

}  // namespace springtwin
