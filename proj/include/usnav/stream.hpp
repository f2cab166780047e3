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
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "usnav/tracking.hpp"

namespace usnav {

// Wire frame: 4-byte big-endian body length, then the body. The body is one
// kind byte followed by the payload bytes.
enum class MessageKind : std::uint8_t { POSE = 1, IMAGE_FRAME = 2, STATUS = 3, SCENE_UPDATE = 4, COMMAND = 5 };

inline constexpr std::size_t kMaxFrameBytes = 16u << 20;

std::string_view to_string(MessageKind k);

struct StreamMessage {
  MessageKind kind = MessageKind::STATUS;
  std::string payload;

  friend bool operator==(const StreamMessage&, const StreamMessage&) = default;
};

std::string encode_frame(const StreamMessage& msg);

/// Reassembles frames from arbitrarily split byte chunks.
class FrameDecoder {
 public:
  /// Throws FRAME_TOO_LARGE as soon as a length prefix exceeds kMaxFrameBytes
  /// and PARSE on an unknown kind byte.
  void feed(std::string_view bytes);
  std::optional<StreamMessage> next();
  std::size_t buffered() const { return buffer_.size() - offset_; }

 private:
  std::string buffer_;
  std::size_t offset_ = 0;
  std::deque<StreamMessage> ready_;
};

// ---- payload codecs -------------------------------------------------------

std::string encode_pose_payload(const TrackedSample& s);
TrackedSample decode_pose_payload(std::string_view payload);

/// IMAGE_FRAME payload: 32-byte big-endian header (u32 width, u32 height,
/// f32 du, f32 dv, f64 timestamp, u64 sequence) then row-major 8-bit pixels.
struct ImagePayload {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  float du = 0.0f;
  float dv = 0.0f;
  double timestamp = 0.0;
  std::uint64_t sequence = 0;
  std::vector<std::uint8_t> pixels;

  friend bool operator==(const ImagePayload&, const ImagePayload&) = default;
};

inline constexpr std::size_t kImageHeaderBytes = 32;

std::string encode_image_payload(const ImagePayload& img);
ImagePayload decode_image_payload(std::string_view payload);

// ---- bounded queue --------------------------------------------------------

/// Producer/consumer queue with back-pressure. When full, a SCENE_UPDATE push
/// evicts the oldest queued SCENE_UPDATE; every other kind blocks until space
/// frees up, so POSE and IMAGE_FRAME are never dropped.
class MessageQueue {
 public:
  explicit MessageQueue(std::size_t max_depth = 1024);

  /// Returns false if the queue was closed.
  bool push(StreamMessage msg);
  /// Blocks until a message is available; nullopt once closed and drained.
  std::optional<StreamMessage> pop();
  void close();

  std::size_t size() const;
  std::size_t dropped() const;
  std::size_t max_depth() const { return max_depth_; }

 private:
  mutable std::mutex mu_;
  std::condition_variable not_empty_;
  std::condition_variable not_full_;
  std::deque<StreamMessage> items_;
  std::size_t max_depth_;
  std::size_t dropped_ = 0;
  bool closed_ = false;
};

// ---- TCP transport --------------------------------------------------------

/// Length-prefixed TCP server. Every connection is an independent ordered
/// channel; broadcast writes each message to every live client.
class StreamServer {
 public:
  using MessageHandler = std::function<void(std::uint64_t client_id, const StreamMessage&)>;

  /// port 0 binds an ephemeral port (see port()).
  explicit StreamServer(std::uint16_t port, MessageHandler on_message = {});
  ~StreamServer();
  StreamServer(const StreamServer&) = delete;
  StreamServer& operator=(const StreamServer&) = delete;

  std::uint16_t port() const { return port_; }
  void broadcast(const StreamMessage& msg);
  std::size_t client_count() const;
  /// Blocks until `n` clients are connected or the timeout elapses.
  bool wait_for_clients(std::size_t n, int timeout_ms) const;
  /// Forwards queue contents to all clients until the queue closes.
  void pump(MessageQueue& queue);
  void stop();

 private:
  struct Client {
    std::uint64_t id = 0;
    int fd = -1;
    std::thread reader;
    std::atomic<bool> alive{true};
  };

  void accept_loop();
  void read_loop(Client* c);

  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  MessageHandler on_message_;
  std::atomic<bool> running_{true};
  std::thread acceptor_;
  mutable std::mutex mu_;
  mutable std::condition_variable clients_changed_;
  std::list<std::unique_ptr<Client>> clients_;
  std::uint64_t next_id_ = 1;
};

class StreamClient {
 public:
  static StreamClient connect(const std::string& host, std::uint16_t port);

  StreamClient(StreamClient&& other) noexcept;
  StreamClient& operator=(StreamClient&& other) noexcept;
  ~StreamClient();

  /// Blocks for the next message; throws DISCONNECTED when the peer closes.
  StreamMessage next();
  /// As next(), but gives up after timeout_ms and returns nullopt.
  std::optional<StreamMessage> next_for(int timeout_ms);
  void send(const StreamMessage& msg);
  void close();

 private:
  explicit StreamClient(int fd) : fd_(fd) {}
  int fd_ = -1;
  FrameDecoder decoder_;
};

// Low-level helpers shared by the transports.
namespace detail {
void send_all(int fd, std::string_view bytes);
}  // namespace detail

}  // namespace usnav
