#include "usnav/websocket.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <openssl/evp.h>
#include <openssl/sha.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <cerrno>
#include <chrono>
#include <cstring>

#include "usnav/error.hpp"
#include "usnav/stream.hpp"

namespace usnav {

namespace {

constexpr std::string_view kWsGuid = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11";
constexpr std::size_t kMaxHandshakeBytes = 16 * 1024;

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

std::optional<std::string> header_value(std::string_view request, std::string_view name) {
  const std::string req = lower(request);
  const std::string key = "\r\n" + lower(name) + ":";
  const auto pos = req.find(key);
  if (pos == std::string::npos) return std::nullopt;
  auto start = pos + key.size();
  const auto end = request.find("\r\n", start);
  std::string v(request.substr(start, end - start));
  v.erase(0, v.find_first_not_of(" \t"));
  v.erase(v.find_last_not_of(" \t") + 1);
  return v;
}

}  // namespace

std::string websocket_accept_key(std::string_view client_key) {
  const std::string input = std::string(client_key) + std::string(kWsGuid);
  std::array<unsigned char, SHA_DIGEST_LENGTH> digest{};
  SHA1(reinterpret_cast<const unsigned char*>(input.data()), input.size(), digest.data());
  std::array<unsigned char, 4 * ((SHA_DIGEST_LENGTH + 2) / 3) + 1> b64{};
  const int n = EVP_EncodeBlock(b64.data(), digest.data(), SHA_DIGEST_LENGTH);
  return std::string(reinterpret_cast<const char*>(b64.data()), static_cast<std::size_t>(n));
}

std::string encode_ws_frame(WsOpcode opcode, std::string_view payload, std::optional<std::uint32_t> mask) {
  std::string out;
  out.push_back(static_cast<char>(0x80 | static_cast<std::uint8_t>(opcode)));
  const std::uint8_t mask_bit = mask ? 0x80 : 0x00;
  const std::size_t n = payload.size();
  if (n < 126) {
    out.push_back(static_cast<char>(mask_bit | n));
  } else if (n <= 0xffff) {
    out.push_back(static_cast<char>(mask_bit | 126));
    out.push_back(static_cast<char>((n >> 8) & 0xff));
    out.push_back(static_cast<char>(n & 0xff));
  } else {
    out.push_back(static_cast<char>(mask_bit | 127));
    for (int shift = 56; shift >= 0; shift -= 8) out.push_back(static_cast<char>((static_cast<std::uint64_t>(n) >> shift) & 0xff));
  }
  if (!mask) {
    out.append(payload);
    return out;
  }
  std::array<std::uint8_t, 4> key{};
  for (int i = 0; i < 4; ++i) key[i] = static_cast<std::uint8_t>((*mask >> (24 - 8 * i)) & 0xff);
  for (auto k : key) out.push_back(static_cast<char>(k));
  for (std::size_t i = 0; i < n; ++i) out.push_back(static_cast<char>(static_cast<std::uint8_t>(payload[i]) ^ key[i % 4]));
  return out;
}

void WsFrameDecoder::feed(std::string_view bytes) {
  buffer_.append(bytes);
  while (buffer_.size() >= 2) {
    const auto b0 = static_cast<std::uint8_t>(buffer_[0]);
    const auto b1 = static_cast<std::uint8_t>(buffer_[1]);
    const bool masked = (b1 & 0x80) != 0;
    if (require_mask_ && !masked) throw Error(Errc::Parse, "unmasked client frame");
    std::uint64_t len = b1 & 0x7f;
    std::size_t at = 2;
    if (len == 126) {
      if (buffer_.size() < 4) return;
      len = (static_cast<std::uint8_t>(buffer_[2]) << 8) | static_cast<std::uint8_t>(buffer_[3]);
      at = 4;
    } else if (len == 127) {
      if (buffer_.size() < 10) return;
      len = 0;
      for (int i = 0; i < 8; ++i) len = (len << 8) | static_cast<std::uint8_t>(buffer_[2 + i]);
      at = 10;
    }
    if (len > kMaxFrameBytes) throw Error(Errc::FrameTooLarge, "websocket frame too large");
    const std::size_t need = at + (masked ? 4 : 0) + static_cast<std::size_t>(len);
    if (buffer_.size() < need) return;
    WsFrame f;
    f.fin = (b0 & 0x80) != 0;
    f.opcode = static_cast<WsOpcode>(b0 & 0x0f);
    f.payload = buffer_.substr(at + (masked ? 4 : 0), static_cast<std::size_t>(len));
    if (masked) {
      for (std::size_t i = 0; i < f.payload.size(); ++i) f.payload[i] = static_cast<char>(f.payload[i] ^ buffer_[at + (i % 4)]);
    }
    ready_.push_back(std::move(f));
    buffer_.erase(0, need);
  }
}

std::optional<WsFrame> WsFrameDecoder::next() {
  if (ready_.empty()) return std::nullopt;
  WsFrame f = std::move(ready_.front());
  ready_.pop_front();
  return f;
}

WebSocketBridge::WebSocketBridge(std::uint16_t port, TextHandler on_text) : on_text_(std::move(on_text)) {
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

WebSocketBridge::~WebSocketBridge() { stop(); }

void WebSocketBridge::accept_loop() {
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
    c->reader = std::thread([this, raw] { serve(raw); });
    clients_.push_back(std::move(c));
  }
}

void WebSocketBridge::serve(Client* c) {
  std::array<char, 16 * 1024> buf{};
  try {
    std::string request;
    while (request.find("\r\n\r\n") == std::string::npos) {
      const ssize_t n = ::recv(c->fd, buf.data(), buf.size(), 0);
      if (n <= 0) throw Error(Errc::Disconnected, "closed during handshake");
      request.append(buf.data(), static_cast<std::size_t>(n));
      if (request.size() > kMaxHandshakeBytes) throw Error(Errc::Parse, "handshake too large");
    }
    const auto head_end = request.find("\r\n\r\n") + 4;
    const auto key = header_value(request, "Sec-WebSocket-Key");
    const auto upgrade = header_value(request, "Upgrade");
    if (!key || !upgrade || lower(*upgrade) != "websocket") {
      detail::send_all(c->fd, "HTTP/1.1 400 Bad Request\r\nContent-Length: 0\r\nConnection: close\r\n\r\n");
      throw Error(Errc::Parse, "not a websocket upgrade");
    }
    {
      std::lock_guard w(c->write_mu);
      detail::send_all(c->fd, "HTTP/1.1 101 Switching Protocols\r\nUpgrade: websocket\r\nConnection: Upgrade\r\n"
                              "Sec-WebSocket-Accept: " + websocket_accept_key(*key) + "\r\n\r\n");
    }
    c->open = true;
    changed_.notify_all();

    WsFrameDecoder decoder(true);
    decoder.feed(std::string_view(request).substr(head_end));
    std::string partial;
    bool closing = false;
    while (running_ && !closing) {
      while (auto f = decoder.next()) {
        switch (f->opcode) {
          case WsOpcode::Text:
          case WsOpcode::Binary:
          case WsOpcode::Continuation:
            partial += f->payload;
            if (f->fin) {
              if (on_text_) on_text_(c->id, partial);
              partial.clear();
            }
            break;
          case WsOpcode::Ping: {
            std::lock_guard w(c->write_mu);
            detail::send_all(c->fd, encode_ws_frame(WsOpcode::Pong, f->payload));
            break;
          }
          case WsOpcode::Close: {
            std::lock_guard w(c->write_mu);
            detail::send_all(c->fd, encode_ws_frame(WsOpcode::Close, ""));
            closing = true;
            break;
          }
          default:
            break;
        }
        if (closing) break;
      }
      if (closing) break;
      const ssize_t n = ::recv(c->fd, buf.data(), buf.size(), 0);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) break;
      decoder.feed(std::string_view(buf.data(), static_cast<std::size_t>(n)));
    }
  } catch (const std::exception&) {
  }
  c->open = false;
  c->alive = false;
  ::shutdown(c->fd, SHUT_RDWR);
  changed_.notify_all();
}

void WebSocketBridge::broadcast_text(std::string_view text) {
  const std::string frame = encode_ws_frame(WsOpcode::Text, text);
  std::lock_guard lock(mu_);
  for (auto it = clients_.begin(); it != clients_.end();) {
    Client& c = **it;
    if (c.alive && c.open) {
      try {
        std::lock_guard w(c.write_mu);
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

std::size_t WebSocketBridge::client_count() const {
  std::lock_guard lock(mu_);
  std::size_t n = 0;
  for (const auto& c : clients_) n += (c->alive && c->open) ? 1 : 0;
  return n;
}

bool WebSocketBridge::wait_for_clients(std::size_t n, int timeout_ms) const {
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
  while (std::chrono::steady_clock::now() < deadline) {
    if (client_count() >= n) return true;
    std::unique_lock lock(mu_);
    changed_.wait_for(lock, std::chrono::milliseconds(10));
  }
  return client_count() >= n;
}

void WebSocketBridge::stop() {
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

}  // namespace usnav
