#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>

namespace usnav {

// Browser-facing bridge for the scene stream: SCENE_UPDATE payloads go out as
// WebSocket text messages, and text messages from the browser are handed to
// the engine as commands. Only the subset of RFC 6455 a browser client needs
// is implemented (no extensions, no fragmented sends).

std::string websocket_accept_key(std::string_view client_key);

enum class WsOpcode : std::uint8_t { Continuation = 0x0, Text = 0x1, Binary = 0x2, Close = 0x8, Ping = 0x9, Pong = 0xA };

struct WsFrame {
  bool fin = true;
  WsOpcode opcode = WsOpcode::Text;
  std::string payload;
};

/// Server frames are unmasked; client frames must carry a mask.
std::string encode_ws_frame(WsOpcode opcode, std::string_view payload, std::optional<std::uint32_t> mask = {});

class WsFrameDecoder {
 public:
  explicit WsFrameDecoder(bool require_mask) : require_mask_(require_mask) {}
  void feed(std::string_view bytes);
  std::optional<WsFrame> next();

 private:
  bool require_mask_;
  std::string buffer_;
  std::deque<WsFrame> ready_;
};

class WebSocketBridge {
 public:
  using TextHandler = std::function<void(std::uint64_t client_id, const std::string& text)>;

  explicit WebSocketBridge(std::uint16_t port, TextHandler on_text = {});
  ~WebSocketBridge();
  WebSocketBridge(const WebSocketBridge&) = delete;
  WebSocketBridge& operator=(const WebSocketBridge&) = delete;

  std::uint16_t port() const { return port_; }
  void broadcast_text(std::string_view text);
  std::size_t client_count() const;
  bool wait_for_clients(std::size_t n, int timeout_ms) const;
  void stop();

 private:
  struct Client {
    std::uint64_t id = 0;
    int fd = -1;
    std::thread reader;
    std::atomic<bool> open{false};
    std::atomic<bool> alive{true};
    std::mutex write_mu;
  };

  void accept_loop();
  void serve(Client* c);

  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  TextHandler on_text_;
  std::atomic<bool> running_{true};
  std::thread acceptor_;
  mutable std::mutex mu_;
  mutable std::condition_variable changed_;
  std::list<std::unique_ptr<Client>> clients_;
  std::uint64_t next_id_ = 1;
};

}  // namespace usnav
