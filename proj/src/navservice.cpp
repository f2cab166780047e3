#include "usnav/navservice.hpp"

#include <json.hpp>

#include <cstdio>

#include "usnav/error.hpp"

namespace usnav {

using json = nlohmann::json;

UiCommand parse_ui_command(std::string_view text) {
  try {
    const json j = json::parse(text);
    UiCommand c;
    const std::string cmd = j.at("cmd").get<std::string>();
    if (j.contains("t")) c.timestamp = j.at("t").get<double>();
    if (cmd == "steer") {
      c.kind = UiCommand::Kind::Steer;
      c.device = device_from_string(j.value("device", std::string("POINTER")));
      const auto& p = j.at("p");
      Quat q = Quat::Identity();
      if (j.contains("q")) {
        const auto& qj = j.at("q");
        q = Quat(qj.at(0).get<double>(), qj.at(1).get<double>(), qj.at(2).get<double>(), qj.at(3).get<double>());
      }
      c.pose = Pose(q, Vec3(p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>()), 0.0,
                    TrackStatus::OK, FrameId::REFERENCE);
    } else if (cmd == "clip") {
      c.kind = UiCommand::Kind::Clip;
    } else if (cmd == "margin") {
      c.kind = UiCommand::Kind::Margin;
      c.margin_mm = j.at("margin_mm").get<double>();
    } else {
      throw Error(Errc::Parse, "unknown command '" + cmd + "'");
    }
    return c;
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw Error(Errc::Parse, std::string("bad command: ") + e.what());
  }
}

std::string format_ui_command(const UiCommand& c) {
  json j;
  switch (c.kind) {
    case UiCommand::Kind::Steer: {
      const auto& q = c.pose.rotation();
      const auto& p = c.pose.translation();
      j = json{{"cmd", "steer"},
               {"device", std::string(to_string(c.device))},
               {"q", {q.w(), q.x(), q.y(), q.z()}},
               {"p", {p.x(), p.y(), p.z()}}};
      break;
    }
    case UiCommand::Kind::Clip: j = json{{"cmd", "clip"}}; break;
    case UiCommand::Kind::Margin: j = json{{"cmd", "margin"}, {"margin_mm", c.margin_mm}}; break;
  }
  if (c.timestamp) j["t"] = *c.timestamp;
  return j.dump();
}

NavigationService::NavigationService(std::unique_ptr<NavEngine> engine, ServiceOptions opts)
    : engine_(std::move(engine)), driver_(*engine_), publisher_(engine_->config().publish_rate_hz) {
  snapshot_ = std::make_shared<const SceneSnapshot>(engine_->snapshot());
  server_ = std::make_unique<StreamServer>(opts.port, [this](std::uint64_t, const StreamMessage& m) {
    try {
      if (m.kind == MessageKind::COMMAND) {
        submit(parse_ui_command(m.payload));
      } else if (m.kind == MessageKind::POSE) {
        submit(decode_pose_payload(m.payload));
      }
    } catch (const Error&) {
      // Malformed client input is dropped; the channel stays open.
    }
  });
  if (opts.ws_port) {
    bridge_ = std::make_unique<WebSocketBridge>(*opts.ws_port, [this](std::uint64_t, const std::string& text) {
      try {
        submit(parse_ui_command(text));
      } catch (const Error&) {
      }
    });
  }
  writer_ = std::thread([this] { writer_loop(); });
}

NavigationService::~NavigationService() { stop(); }

std::optional<std::uint16_t> NavigationService::ws_port() const {
  if (!bridge_) return std::nullopt;
  return bridge_->port();
}

void NavigationService::submit(const TrackedSample& s) {
  {
    std::lock_guard lk(mu_);
    if (stopping_) return;
    queue_.emplace_back(s);
  }
  cv_.notify_one();
}

void NavigationService::submit(const UiCommand& c) {
  {
    std::lock_guard lk(mu_);
    if (stopping_) return;
    queue_.emplace_back(c);
  }
  cv_.notify_one();
}

void NavigationService::drain() {
  std::unique_lock lk(mu_);
  idle_cv_.wait(lk, [&] { return (queue_.empty() && !busy_) || stopping_; });
}

std::shared_ptr<const SceneSnapshot> NavigationService::snapshot() const {
  std::lock_guard lk(mu_);
  return snapshot_;
}

SessionRecord NavigationService::record() const {
  std::lock_guard lk(engine_mu_);
  return driver_.record();
}

std::size_t NavigationService::published() const {
  std::lock_guard lk(mu_);
  return published_;
}

std::size_t NavigationService::subscribers() const {
  return server_->client_count() + (bridge_ ? bridge_->client_count() : 0);
}

void NavigationService::stop() {
  {
    std::lock_guard lk(mu_);
    if (stopping_ && !writer_.joinable()) return;
    stopping_ = true;
  }
  cv_.notify_all();
  idle_cv_.notify_all();
  if (writer_.joinable()) writer_.join();
  if (bridge_) bridge_->stop();
  if (server_) server_->stop();
}

void NavigationService::writer_loop() {
  for (;;) {
    Input in;
    {
      std::unique_lock lk(mu_);
      cv_.wait(lk, [&] { return stopping_ || !queue_.empty(); });
      if (stopping_) return;
      in = std::move(queue_.front());
      queue_.pop_front();
      busy_ = true;
    }
    apply(in);
    {
      std::lock_guard lk(mu_);
      busy_ = false;
    }
    idle_cv_.notify_all();
  }
}

void NavigationService::apply(const Input& in) {
  bool force = false;
  {
    std::lock_guard lk(engine_mu_);
    if (const auto* s = std::get_if<TrackedSample>(&in)) {
      driver_.feed(*s);
    } else {
      const auto& c = std::get<UiCommand>(in);
      const double t = c.timestamp.value_or(engine_->now());
      switch (c.kind) {
        case UiCommand::Kind::Steer: {
          // Steering is ignored unless the reference is live.
          const auto ref = engine_->reference();
          if (engine_->state() == NavState::LOST || !ref) break;
          TrackedSample s;
          s.device = c.device;
          s.sequence = ++steer_seq_;
          s.pose = compose(*ref, c.pose).with_timestamp(t).with_frame(FrameId::WORLD);
          driver_.feed(s);
          break;
        }
        case UiCommand::Kind::Clip:
          driver_.command({NavCommand::Kind::DigitizeClip, t, 0.0});
          force = true;
          break;
        case UiCommand::Kind::Margin:
          driver_.command({NavCommand::Kind::SetMargin, t, c.margin_mm});
          force = true;
          break;
      }
    }
    auto snap = std::make_shared<const SceneSnapshot>(engine_->snapshot());
    std::lock_guard lk2(mu_);
    snapshot_ = std::move(snap);
  }
  publish(force);
}

void NavigationService::publish(bool force) {
  const std::size_t n = subscribers();
  if (n == 0) {
    last_subscribers_ = 0;
    return;
  }
  if (n > last_subscribers_) publisher_.reset_meshes();
  last_subscribers_ = n;
  std::optional<StreamMessage> msg;
  try {
    msg = publisher_.maybe_publish(*snapshot(), force);
    if (!msg) return;
    server_->broadcast(*msg);
  } catch (const Error& e) {
    // An update that cannot be framed is skipped; the next one resends its meshes.
    std::fprintf(stderr, "scene update dropped: %s\n", e.what());
    publisher_.reset_meshes();
    return;
  }
  if (bridge_) bridge_->broadcast_text(msg->payload);
  std::lock_guard lk(mu_);
  ++published_;
}

}  // namespace usnav
