#include <doctest.h>

#include <atomic>
#include <chrono>
#include <mutex>
#include <random>
#include <thread>
#include <vector>

#include "sockets.hpp"
#include "support.hpp"
#include "usnav/stream.hpp"
#include "usnav/websocket.hpp"

using namespace usnav;

using testing::raw_connect;
using testing::recv_some;

TEST_CASE("frame layout is a big-endian length then kind and payload") {
  const std::string f = encode_frame({MessageKind::STATUS, "ready"});
  REQUIRE(f.size() == 10);
  CHECK(f.substr(0, 4) == std::string("\0\0\0\x06", 4));
  CHECK(f[4] == 3);
  CHECK(f.substr(5) == "ready");
}

TEST_CASE("back-to-back frames in one chunk decode as two messages") {
  FrameDecoder d;
  d.feed(encode_frame({MessageKind::STATUS, "a"}) + encode_frame({MessageKind::SCENE_UPDATE, "{}"}));
  auto a = d.next();
  auto b = d.next();
  REQUIRE(a);
  REQUIRE(b);
  CHECK(a->payload == "a");
  CHECK(b->kind == MessageKind::SCENE_UPDATE);
  CHECK_FALSE(d.next());
  CHECK(d.buffered() == 0);
}

TEST_CASE("arbitrary split points reassemble the original messages") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<StreamMessage> msgs;
    std::string wire;
    const int count = 1 + static_cast<int>(rng() % 6);
    for (int i = 0; i < count; ++i) {
      StreamMessage m{static_cast<MessageKind>(1 + rng() % 5), std::string(rng() % 300, '\0')};
      for (auto& ch : m.payload) ch = static_cast<char>(rng());
      wire += encode_frame(m);
      msgs.push_back(m);
    }
    FrameDecoder d;
    std::vector<StreamMessage> got;
    std::size_t pos = 0;
    while (pos < wire.size()) {
      const std::size_t take = std::min<std::size_t>(wire.size() - pos, 1 + rng() % 17);
      d.feed(std::string_view(wire).substr(pos, take));
      pos += take;
      while (auto m = d.next()) got.push_back(*m);
    }
    CHECK(got == msgs);
  }
}

TEST_CASE("oversized and malformed frames are rejected") {
  FrameDecoder d;
  const std::string huge("\x01\x00\x00\x01", 4);
  CHECK_ERRC(d.feed(huge), Errc::FrameTooLarge);
  FrameDecoder d2;
  CHECK_ERRC(d2.feed(std::string("\0\0\0\x01\x09", 5)), Errc::Parse);
  CHECK_ERRC(encode_frame({MessageKind::IMAGE_FRAME, std::string(kMaxFrameBytes, 'x')}), Errc::FrameTooLarge);
}

TEST_CASE("pose and image payload codecs round-trip") {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 100; ++i) {
    TrackedSample s{kAllDevices[i % 4], testing::random_pose(rng, 0.001 * i), static_cast<std::uint64_t>(i + 1)};
    CHECK(decode_pose_payload(encode_pose_payload(s)) == s);
  }
  TrackedSample m{Device::REFERENCE, Pose::missing(2.5), 9};
  CHECK(decode_pose_payload(encode_pose_payload(m)) == m);
  CHECK_ERRC(decode_pose_payload("{\"dev\":1}"), Errc::Parse);

  ImagePayload img{3, 2, 0.5f, 0.25f, 1.75, 42, {1, 2, 3, 4, 5, 6}};
  const std::string bytes = encode_image_payload(img);
  CHECK(bytes.size() == kImageHeaderBytes + 6);
  CHECK(decode_image_payload(bytes) == img);
  CHECK_ERRC(decode_image_payload(bytes.substr(0, 20)), Errc::Parse);
  CHECK_ERRC(decode_image_payload(bytes + "x"), Errc::Parse);
}

TEST_CASE("queue drops only stale scene updates under back-pressure") {
  MessageQueue q(2);
  CHECK(q.push({MessageKind::SCENE_UPDATE, "1"}));
  CHECK(q.push({MessageKind::SCENE_UPDATE, "2"}));
  CHECK(q.push({MessageKind::SCENE_UPDATE, "3"}));
  CHECK(q.dropped() == 1);
  CHECK(q.pop()->payload == "2");

  std::atomic<bool> pushed{false};
  q.push({MessageKind::POSE, "p1"});
  std::thread producer([&] {
    q.push({MessageKind::POSE, "p2"});
    pushed = true;
  });
  std::this_thread::sleep_for(std::chrono::milliseconds(50));
  CHECK_FALSE(pushed.load());
  CHECK(q.pop()->payload == "3");
  producer.join();
  CHECK(pushed.load());
  CHECK(q.pop()->payload == "p1");
  CHECK(q.pop()->payload == "p2");
  q.close();
  CHECK_FALSE(q.pop());
  CHECK_FALSE(q.push({MessageKind::POSE, "late"}));
}

TEST_CASE("STATUS ready reaches the client unchanged") {
  StreamServer server(0);
  auto client = StreamClient::connect("127.0.0.1", server.port());
  REQUIRE(server.wait_for_clients(1, 2000));
  server.broadcast({MessageKind::STATUS, "ready"});
  const StreamMessage m = client.next();
  CHECK(m.kind == MessageKind::STATUS);
  CHECK(m.payload == "ready");
}

TEST_CASE("1000 POSE messages arrive in order") {
  StreamServer server(0);
  auto client = StreamClient::connect("127.0.0.1", server.port());
  REQUIRE(server.wait_for_clients(1, 2000));
  MessageQueue q(64);
  std::thread pump([&] { server.pump(q); });
  for (std::uint64_t i = 1; i <= 1000; ++i) {
    q.push({MessageKind::POSE, encode_pose_payload({Device::PROBE, Pose::identity(i * 0.01), i})});
  }
  std::uint64_t expect = 1;
  while (expect <= 1000) {
    const auto m = client.next_for(5000);
    REQUIRE(m);
    CHECK(decode_pose_payload(m->payload).sequence == expect);
    ++expect;
  }
  q.close();
  pump.join();
}

TEST_CASE("client messages reach the server handler") {
  std::mutex mu;
  std::vector<std::string> seen;
  StreamServer server(0, [&](std::uint64_t, const StreamMessage& m) {
    std::lock_guard lock(mu);
    seen.push_back(m.payload);
  });
  auto client = StreamClient::connect("127.0.0.1", server.port());
  client.send({MessageKind::COMMAND, "{\"cmd\":\"clip\"}"});
  client.send({MessageKind::COMMAND, "{\"cmd\":\"margin\",\"margin_mm\":7}"});
  for (int i = 0; i < 200; ++i) {
    {
      std::lock_guard lock(mu);
      if (seen.size() == 2) break;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  std::lock_guard lock(mu);
  REQUIRE(seen.size() == 2);
  CHECK(seen[1].find("margin") != std::string::npos);
}

TEST_CASE("a server shutdown surfaces as DISCONNECTED") {
  auto server = std::make_unique<StreamServer>(0);
  auto client = StreamClient::connect("127.0.0.1", server->port());
  REQUIRE(server->wait_for_clients(1, 2000));
  server->stop();
  CHECK_ERRC(client.next(), Errc::Disconnected);
}

TEST_CASE("a client announcing an oversized frame is dropped") {
  StreamServer server(0);
  const int fd = raw_connect(server.port());
  REQUIRE(server.wait_for_clients(1, 2000));
  const std::string prefix("\x02\x00\x00\x00\x01", 5);
  CHECK(::send(fd, prefix.data(), prefix.size(), 0) == 5);
  CHECK(recv_some(fd).empty());
  ::close(fd);
}

TEST_CASE("connecting to a closed port fails with DISCONNECTED") {
  std::uint16_t port = 0;
  {
    StreamServer s(0);
    port = s.port();
  }
  CHECK_ERRC(StreamClient::connect("127.0.0.1", port), Errc::Disconnected);
}

// ---- WebSocket bridge ----------------------------------------------------------

TEST_CASE("websocket accept key") {
  CHECK(websocket_accept_key("dGhlIHNhbXBsZSBub25jZQ==") == "s3pPLMBiTxaQ9kYGzzhZRbK+xOo=");
}

TEST_CASE("websocket frames round-trip, masked and unmasked") {
  for (std::size_t len : {0u, 5u, 125u, 126u, 65535u, 65536u, 70000u}) {
    const std::string payload(len, 'q');
    WsFrameDecoder server(true);
    server.feed(encode_ws_frame(WsOpcode::Text, payload, 0x12345678u));
    auto f = server.next();
    REQUIRE(f);
    CHECK(f->payload == payload);
    CHECK(f->opcode == WsOpcode::Text);

    WsFrameDecoder client(false);
    const std::string wire = encode_ws_frame(WsOpcode::Binary, payload);
    for (char c : wire) client.feed(std::string_view(&c, 1));
    f = client.next();
    REQUIRE(f);
    CHECK(f->payload == payload);
  }
  WsFrameDecoder strict(true);
  CHECK_ERRC(strict.feed(encode_ws_frame(WsOpcode::Text, "hi")), Errc::Parse);
}

TEST_CASE("websocket bridge handshake, broadcast and inbound text") {
  std::mutex mu;
  std::vector<std::string> texts;
  WebSocketBridge bridge(0, [&](std::uint64_t, const std::string& t) {
    std::lock_guard lock(mu);
    texts.push_back(t);
  });
  testing::WsClient ws(bridge.port());
  CHECK(ws.response().rfind("HTTP/1.1 101", 0) == 0);
  CHECK(ws.response().find("s3pPLMBiTxaQ9kYGzzhZRbK+xOo=") != std::string::npos);
  REQUIRE(bridge.wait_for_clients(1, 2000));

  bridge.broadcast_text("{\"state\":\"SETUP\"}");
  CHECK(ws.next_text() == "{\"state\":\"SETUP\"}");

  ws.send_text("{\"cmd\":\"clip\"}");
  REQUIRE(testing::eventually([&] {
    std::lock_guard lock(mu);
    return !texts.empty();
  }));
  std::lock_guard lock(mu);
  REQUIRE(texts.size() == 1);
  CHECK(texts[0] == "{\"cmd\":\"clip\"}");
}
