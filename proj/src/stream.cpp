#include "usnav/stream.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <array>
#include <bit>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <json.hpp>

#include "usnav/error.hpp"

namespace usnav {

using json = nlohmann::json;

std::string_view to_string(MessageKind k) {
  switch (k) {
    case MessageKind::POSE: return "POSE";
    case MessageKind::IMAGE_FRAME: return "IMAGE_FRAME";
    case MessageKind::STATUS: return "STATUS";
    case MessageKind::SCENE_UPDATE: return "SCENE_UPDATE";
    case MessageKind::COMMAND: return "COMMAND";
  }
  return "STATUS";
}

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<char>((v >> shift) & 0xffu));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int shift = 56; shift >= 0; shift -= 8) out.push_back(static_cast<char>((v >> shift) & 0xffu));
}

std::uint32_t get_u32(std::string_view in, std::size_t at) {
  std::uint32_t v = 0;
  for (std::size_t i = 0; i < 4; ++i) v = (v << 8) | static_cast<std::uint8_t>(in[at + i]);
  return v;
}

std::uint64_t get_u64(std::string_view in, std::size_t at) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < 8; ++i) v = (v << 8) | static_cast<std::uint8_t>(in[at + i]);
  return v;
}

bool valid_kind(std::uint8_t k) { return k >= 1 && k <= 5; }

}  // namespace

std::string encode_frame(const StreamMessage& msg) {
  const std::size_t body = msg.payload.size() + 1;
  if (body > kMaxFrameBytes) throw Error(Errc::FrameTooLarge, "frame of " + std::to_string(body) + " bytes");
  std::string out;
  out.reserve(4 + body);
  put_u32(out, static_cast<std::uint32_t>(body));
  out.push_back(static_cast<char>(msg.kind));
  out += msg.payload;
  return out;
}

void FrameDecoder::feed(std::string_view bytes) {
  buffer_.append(bytes);
  while (buffer_.size() - offset_ >= 4) {
    const std::uint32_t body = get_u32(buffer_, offset_);
    if (body > kMaxFrameBytes) throw Error(Errc::FrameTooLarge, "incoming frame of " + std::to_string(body) + " bytes");
    if (body == 0) throw Error(Errc::Parse, "zero-length frame");
    if (buffer_.size() - offset_ < 4 + static_cast<std::size_t>(body)) break;
    const auto kind = static_cast<std::uint8_t>(buffer_[offset_ + 4]);
    if (!valid_kind(kind)) throw Error(Errc::Parse, "unknown message kind " + std::to_string(kind));
    ready_.push_back({static_cast<MessageKind>(kind), buffer_.substr(offset_ + 5, body - 1)});
    offset_ += 4 + body;
  }
  if (offset_ > 0 && offset_ * 2 >= buffer_.size()) {
    buffer_.erase(0, offset_);
    offset_ = 0;
  }
}

std::optional<StreamMessage> FrameDecoder::next() {
  if (ready_.empty()) return std::nullopt;
  StreamMessage m = std::move(ready_.front());
  ready_.pop_front();
  return m;
}

// ---- payload codecs -------------------------------------------------------

std::string encode_pose_payload(const TrackedSample& s) {
  const auto& q = s.pose.rotation();
  const auto& p = s.pose.translation();
  json j{{"dev", std::string(to_string(s.device))},
         {"seq", s.sequence},
         {"t", s.pose.timestamp()},
         {"q", {q.w(), q.x(), q.y(), q.z()}},
         {"p", {p.x(), p.y(), p.z()}},
         {"status", std::string(to_string(s.pose.status()))}};
  return j.dump();
}

TrackedSample decode_pose_payload(std::string_view payload) {
  try {
    const json j = json::parse(payload);
    const auto& q = j.at("q");
    const auto& p = j.at("p");
    TrackedSample s;
    s.device = device_from_string(j.at("dev").get<std::string>());
    s.sequence = j.at("seq").get<std::uint64_t>();
    s.pose = Pose(Quat(q.at(0).get<double>(), q.at(1).get<double>(), q.at(2).get<double>(), q.at(3).get<double>()),
                  Vec3(p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>()), j.at("t").get<double>(),
                  status_from_string(j.at("status").get<std::string>()), FrameId::WORLD);
    return s;
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw Error(Errc::Parse, std::string("bad POSE payload: ") + e.what());
  }
}

std::string encode_image_payload(const ImagePayload& img) {
  if (img.pixels.size() != static_cast<std::size_t>(img.width) * img.height) {
    throw Error(Errc::InvalidArgument, "pixel count does not match width*height");
  }
  std::string out;
  out.reserve(kImageHeaderBytes + img.pixels.size());
  put_u32(out, img.width);
  put_u32(out, img.height);
  put_u32(out, std::bit_cast<std::uint32_t>(img.du));
  put_u32(out, std::bit_cast<std::uint32_t>(img.dv));
  put_u64(out, std::bit_cast<std::uint64_t>(img.timestamp));
  put_u64(out, img.sequence);
  out.append(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size());
  return out;
}

ImagePayload decode_image_payload(std::string_view payload) {
  if (payload.size() < kImageHeaderBytes) throw Error(Errc::Parse, "IMAGE_FRAME payload shorter than its header");
  ImagePayload img;
  img.width = get_u32(payload, 0);
  img.height = get_u32(payload, 4);
  img.du = std::bit_cast<float>(get_u32(payload, 8));
  img.dv = std::bit_cast<float>(get_u32(payload, 12));
  img.timestamp = std::bit_cast<double>(get_u64(payload, 16));
  img.sequence = get_u64(payload, 24);
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
  if (payload.size() != kImageHeaderBytes + n) throw Error(Errc::Parse, "IMAGE_FRAME pixel data size mismatch");
  img.pixels.assign(reinterpret_cast<const std::uint8_t*>(payload.data()) + kImageHeaderBytes,
                    reinterpret_cast<const std::uint8_t*>(payload.data()) + kImageHeaderBytes + n);
  return img;
}

// ---- queue ----------------------------------------------------------------

MessageQueue::MessageQueue(std::size_t max_depth) : max_depth_(max_depth) {
  if (max_depth_ == 0) throw Error(Errc::InvalidArgument, "queue depth must be positive");
}

bool MessageQueue::push(StreamMessage msg) {
  std::unique_lock lock(mu_);
  if (closed_) return false;
  if (items_.size() >= max_depth_ && msg.kind == MessageKind::SCENE_UPDATE) {
    for (auto it = items_.begin(); it != items_.end(); ++it) {
      if (it->kind == MessageKind::SCENE_UPDATE) {
        items_.erase(it);
        ++dropped_;
        break;
      }
    }
  }
  not_full_.wait(lock, [&] { return closed_ || items_.size() < max_depth_; });
  if (closed_) return false;
  items_.push_back(std::move(msg));
  not_empty_.notify_one();
  return true;
}

std::optional<StreamMessage> MessageQueue::pop() {
  std::unique_lock lock(mu_);
  not_empty_.wait(lock, [&] { return closed_ || !items_.empty(); });
  if (items_.empty()) return std::nullopt;
  StreamMessage m = std::move(items_.front());
  items_.pop_front();
  not_full_.notify_one();
  return m;
}

void MessageQueue::close() {
  std::lock_guard lock(mu_);
  closed_ = true;
  not_empty_.notify_all();
  not_full_.notify_all();
}

std::size_t MessageQueue::size() const {
  std::lock_guard lock(mu_);
  return items_.size();
}

std::size_t MessageQueue::dropped() const {
  std::lock_guard lock(mu_);
  return dropped_;
}

// ---- sockets --------------------------------------------------------------

void detail::send_all(int fd, std::string_view bytes) {
  std::size_t sent = 0;
  while (sent < bytes.size()) {
    const ssize_t n = ::send(fd, bytes.data() + sent, bytes.size() - sent, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(Errc::Disconnected, std::string("send failed: ") + std::strerror(errno));
    }
    sent += static_cast<std::size_t>(n);
  }
}

StreamServer::StreamServer(std::uint16_t port, MessageHandler on_message) : on_message_(std::move(on_message)) {
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw Error(Errc::Io, "socket() failed");
  int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_ANY);
  addr.sin_port = htons(port);
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0 || ::listen(listen_fd_, 16) < 0) {
    const std::string err = std::strerror(errno);
    ::close(listen_fd_);
    throw Error(Errc::Io, "cannot listen on port " + std::to_string(port) + ": " + err);
  }
  socklen_t len = sizeof(addr);
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
  acceptor_ = std::thread([this] { accept_loop(); });
}

StreamServer::~StreamServer() { stop(); }

void StreamServer::accept_loop() {
  while (running_) {
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) {
      if (errno == EINTR) continue;
      return;
    }
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    std::lock_guard lock(mu_);
    if (!running_) {
      ::close(fd);
      return;
    }
    auto c = std::make_unique<Client>();
    c->id = next_id_++;
    c->fd = fd;
    Client* raw = c.get();
    c->reader = std::thread([this, raw] { read_loop(raw); });
    clients_.push_back(std::move(c));
    clients_changed_.notify_all();
  }
}

void StreamServer::read_loop(Client* c) {
  FrameDecoder decoder;
  std::array<char, 64 * 1024> buf{};
  try {
    while (running_) {
      const ssize_t n = ::recv(c->fd, buf.data(), buf.size(), 0);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) break;
      decoder.feed(std::string_view(buf.data(), static_cast<std::size_t>(n)));
      while (auto m = decoder.next()) {
        if (on_message_) on_message_(c->id, *m);
      }
    }
  } catch (const std::exception&) {
    // Malformed or oversized input: drop this client.
  }
  c->alive = false;
  ::shutdown(c->fd, SHUT_RDWR);
  clients_changed_.notify_all();
}

void StreamServer::broadcast(const StreamMessage& msg) {
  const std::string frame = encode_frame(msg);
  std::lock_guard lock(mu_);
  for (auto it = clients_.begin(); it != clients_.end();) {
    Client& c = **it;
    if (c.alive) {
      try {
        detail::send_all(c.fd, frame);
      } catch (const Error&) {
        c.alive = false;
        ::shutdown(c.fd, SHUT_RDWR);
      }
    }
    if (!c.alive) {
      if (c.reader.joinable()) c.reader.join();
      ::close(c.fd);
      it = clients_.erase(it);
    } else {
      ++it;
    }
  }
}

std::size_t StreamServer::client_count() const {
  std::lock_guard lock(mu_);
  std::size_t n = 0;
  for (const auto& c : clients_) n += c->alive ? 1 : 0;
  return n;
}

bool StreamServer::wait_for_clients(std::size_t n, int timeout_ms) const {
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
  while (std::chrono::steady_clock::now() < deadline) {
    if (client_count() >= n) return true;
    std::unique_lock lock(mu_);
    clients_changed_.wait_for(lock, std::chrono::milliseconds(10));
  }
  return client_count() >= n;
}

void StreamServer::pump(MessageQueue& queue) {
  while (auto m = queue.pop()) broadcast(*m);
}

void StreamServer::stop() {
  if (!running_.exchange(false)) return;
  ::shutdown(listen_fd_, SHUT_RDWR);
  ::close(listen_fd_);
  if (acceptor_.joinable()) acceptor_.join();
  std::lock_guard lock(mu_);
  for (auto& c : clients_) ::shutdown(c->fd, SHUT_RDWR);
  for (auto& c : clients_) {
    if (c->reader.joinable()) c->reader.join();
    ::close(c->fd);
  }
  clients_.clear();
}

// ---- client ---------------------------------------------------------------

StreamClient StreamClient::connect(const std::string& host, std::uint16_t port) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res) != 0 || res == nullptr) {
    throw Error(Errc::Disconnected, "cannot resolve " + host);
  }
  const int fd = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
  if (fd < 0 || ::connect(fd, res->ai_addr, res->ai_addrlen) < 0) {
    ::freeaddrinfo(res);
    if (fd >= 0) ::close(fd);
    throw Error(Errc::Disconnected, "cannot connect to " + host + ":" + std::to_string(port));
  }
  ::freeaddrinfo(res);
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  return StreamClient(fd);
}

StreamClient::StreamClient(StreamClient&& other) noexcept
    : fd_(std::exchange(other.fd_, -1)), decoder_(std::move(other.decoder_)) {}

StreamClient& StreamClient::operator=(StreamClient&& other) noexcept {
  if (this != &other) {
    close();
    fd_ = std::exchange(other.fd_, -1);
    decoder_ = std::move(other.decoder_);
  }
  return *this;
}

StreamClient::~StreamClient() { close(); }

StreamMessage StreamClient::next() {
  while (true) {
    if (auto m = next_for(-1)) return *m;
  }
}

std::optional<StreamMessage> StreamClient::next_for(int timeout_ms) {
  if (auto m = decoder_.next()) return m;
  if (fd_ < 0) throw Error(Errc::Disconnected, "client closed");
  std::array<char, 64 * 1024> buf{};
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(std::max(timeout_ms, 0));
  while (true) {
    int wait = -1;
    if (timeout_ms >= 0) {
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
      if (left.count() <= 0) return std::nullopt;
      wait = static_cast<int>(left.count());
    }
    pollfd pfd{fd_, POLLIN, 0};
    const int pr = ::poll(&pfd, 1, wait);
    if (pr < 0 && errno == EINTR) continue;
    if (pr == 0) return std::nullopt;
    const ssize_t n = ::recv(fd_, buf.data(), buf.size(), 0);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) throw Error(Errc::Disconnected, "server closed the connection");
    decoder_.feed(std::string_view(buf.data(), static_cast<std::size_t>(n)));
    if (auto m = decoder_.next()) return m;
  }
}

void StreamClient::send(const StreamMessage& msg) {
  if (fd_ < 0) throw Error(Errc::Disconnected, "client closed");
  detail::send_all(fd_, encode_frame(msg));
}

void StreamClient::close() {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

}  // namespace usnav
