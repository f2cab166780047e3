#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <variant>

#include "usnav/navengine.hpp"
#include "usnav/stream.hpp"
#include "usnav/websocket.hpp"

namespace usnav {

/// Browser/UI command: {"cmd":"steer","device":"POINTER","p":[x,y,z],"q":[w,x,y,z]?},
/// {"cmd":"clip"} or {"cmd":"margin","margin_mm":7}. An optional "t" stamps it.
/// Steer poses are sensor poses in REFERENCE.
struct UiCommand {
  enum class Kind { Steer, Clip, Margin };
  Kind kind = Kind::Clip;
  Device device = Device::POINTER;
  Pose pose;
  double margin_mm = 0.0;
  std::optional<double> timestamp;
};

/// Throws PARSE on malformed commands.
UiCommand parse_ui_command(std::string_view text);
std::string format_ui_command(const UiCommand& c);

struct ServiceOptions {
  std::uint16_t port = 0;                  // 0 = ephemeral
  std::optional<std::uint16_t> ws_port;    // browser bridge, off when unset
};

/// Runs a NavEngine on its own writer thread. Samples and commands from any
/// thread (or from stream/WebSocket clients) go through one queue; readers
/// get immutable snapshots. Scene updates are broadcast only when someone is
/// subscribed.
class NavigationService {
 public:
  NavigationService(std::unique_ptr<NavEngine> engine, ServiceOptions opts = {});
  ~NavigationService();
  NavigationService(const NavigationService&) = delete;
  NavigationService& operator=(const NavigationService&) = delete;

  std::uint16_t port() const { return server_->port(); }
  std::optional<std::uint16_t> ws_port() const;

  void submit(const TrackedSample& s);
  void submit(const UiCommand& c);
  /// Blocks until every queued input has been applied.
  void drain();
  std::shared_ptr<const SceneSnapshot> snapshot() const;
  /// Inputs and derived clips seen so far.
  SessionRecord record() const;
  std::size_t published() const;
  /// Stream plus WebSocket clients.
  std::size_t subscribers() const;
  void stop();

  StreamServer& server() { return *server_; }

 private:
  using Input = std::variant<TrackedSample, UiCommand>;

  void writer_loop();
  void apply(const Input& in);
  void publish(bool force);

  std::uint64_t steer_seq_ = 0;

  std::unique_ptr<NavEngine> engine_;
  SessionDriver driver_;
  ScenePublisher publisher_;
  std::unique_ptr<StreamServer> server_;
  std::unique_ptr<WebSocketBridge> bridge_;

  mutable std::mutex mu_;        // queue
  mutable std::mutex engine_mu_; // engine + driver, held by the writer while applying
  std::condition_variable cv_;
  std::condition_variable idle_cv_;
  std::deque<Input> queue_;
  bool busy_ = false;
  bool stopping_ = false;
  std::shared_ptr<const SceneSnapshot> snapshot_;
  std::size_t published_ = 0;
  std::size_t last_subscribers_ = 0;
  std::thread writer_;
};

}  // namespace usnav
