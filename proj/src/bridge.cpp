// Copyright 2026 The evoq Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#include "evoq/bridge.hpp"

#include <cerrno>
#include <climits>
#include <cstring>
#include <istream>
#include <ostream>

#include <poll.h>
#include <spawn.h>
#include <sys/socket.h>
#include <sys/un.h>
#include <sys/wait.h>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include "evoq/error.hpp"
#include "evoq/seed.hpp"

extern char** environ;

namespace evoq {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

PromptTemplates PromptTemplates::standard() {
  return {
      "<image><image> You are performing an image quality assessment task. Compare the two "
      "images and decide which one has better perceptual quality. Answer strictly with the "
      "index of the better image: 0 if the first image is better, or 1 if the second image is "
      "better.",
      "<image> You are doing the image quality assessment task. Here is the question: What is "
      "your overall rating on the quality of this picture? The rating should be a float between "
      "1 and 5, rounded to two decimal places, with 1 representing very poor quality and 5 "
      "representing excellent quality.",
      "You FIRST think about the reasoning process as an internal monologue and then provide "
      "the final answer. The reasoning process MUST BE enclosed within <think> </think> tags. "
      "The final answer MUST BE put in boxed{}.",
  };
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

constexpr const char* kTypeNames[] = {"handshake",      "handshake_ack",  "compare_request",
                                      "compare_response", "score_request", "score_response",
                                      "advantage_export", "ack",           "shutdown",
                                      "error"};

json image_json(const ImageRef& ref) {
  json j = {{"id", ref.id}};
  if (!ref.features.empty()) j["features"] = ref.features;
  if (!ref.path.empty()) j["path"] = ref.path;
  return j;
}

const json& field(const json& j, const char* key, std::string_view type) {
  const auto it = j.find(key);
  if (it == j.end())
    fail(ErrorKind::kProtocol, "missing field '" + std::string(key) + "' in " + std::string(type));
  return *it;
}

template <typename T>
T get_as(const json& j, const char* key, std::string_view type) {
  try {
    return field(j, key, type).get<T>();
  } catch (const json::exception&) {
    fail(ErrorKind::kProtocol, "field '" + std::string(key) + "' in " + std::string(type) +
                                   " has the wrong type");
  }
}

ImageRef parse_image(const json& j, std::string_view type) {
  if (!j.is_object()) fail(ErrorKind::kProtocol, "image reference must be an object");
  ImageRef ref;
  ref.id = get_as<int>(j, "id", type);
  if (j.contains("features")) ref.features = get_as<std::vector<double>>(j, "features", type);
  if (j.contains("path")) ref.path = get_as<std::string>(j, "path", type);
  return ref;
}

struct ToJson {
  json& j;
  void operator()(const msg::Handshake& m) const {
    j["protocol_version"] = m.protocol_version;
    j["prompts"] = {{"compare", m.prompts.compare_prompt},
                    {"score", m.prompts.score_prompt},
                    {"suffix", m.prompts.suffix}};
    j["budget_k"] = m.budget_k;
    j["score_scale"] = {{"min", m.score_scale.min_score},
                        {"max", m.score_scale.max_score},
                        {"n_bins", m.score_scale.n_bins}};
  }
  void operator()(const msg::HandshakeAck& m) const {
    j["protocol_version"] = m.protocol_version;
    j["prompt_digests"] = {
        {"compare", m.compare_digest}, {"score", m.score_digest}, {"suffix", m.suffix_digest}};
  }
  void operator()(const msg::CompareRequest& m) const {
    j["pair_id"] = m.pair_id;
    j["image_a"] = image_json(m.image_a);
    j["image_b"] = image_json(m.image_b);
    j["k"] = m.k;
    j["seed"] = m.seed;
  }
  void operator()(const msg::CompareResponse& m) const {
    json votes = json::array();
    for (int v : m.votes) votes.push_back(v == 0 || v == 1 ? json(v) : json(nullptr));
    j["votes"] = votes;
  }
  void operator()(const msg::ScoreRequest& m) const {
    j["image"] = image_json(m.image);
    j["k"] = m.k;
    j["seed"] = m.seed;
  }
  void operator()(const msg::ScoreResponse& m) const {
    json scores = json::array();
    for (const auto& s : m.scores) scores.push_back(s ? json(*s) : json(nullptr));
    j["scores"] = scores;
    if (m.log_probs) j["log_probs"] = *m.log_probs;
    if (m.bins) j["bins"] = *m.bins;
  }
  void operator()(const msg::AdvantageExportMsg& m) const {
    j["round"] = m.payload.round;
    j["batch"] = m.payload.batch;
    j["trajectory_ids"] = m.payload.trajectory_ids;
    j["advantages"] = m.payload.advantages;
    if (m.payload.log_probs) j["log_probs"] = *m.payload.log_probs;
  }
  void operator()(const msg::Ack&) const {}
  void operator()(const msg::Shutdown&) const {}
  void operator()(const msg::ErrorReply& m) const { j["message"] = m.message; }
};

MessageBody parse_body(const json& j, std::string_view type) {
  if (type == "handshake") {
    msg::Handshake m;
    m.protocol_version = get_as<int>(j, "protocol_version", type);
    const json& p = field(j, "prompts", type);
    m.prompts.compare_prompt = get_as<std::string>(p, "compare", type);
    m.prompts.score_prompt = get_as<std::string>(p, "score", type);
    m.prompts.suffix = get_as<std::string>(p, "suffix", type);
    m.budget_k = get_as<int>(j, "budget_k", type);
    const json& s = field(j, "score_scale", type);
    m.score_scale.min_score = get_as<double>(s, "min", type);
    m.score_scale.max_score = get_as<double>(s, "max", type);
    m.score_scale.n_bins = get_as<int>(s, "n_bins", type);
    return m;
  }
  if (type == "handshake_ack") {
    msg::HandshakeAck m;
    m.protocol_version = get_as<int>(j, "protocol_version", type);
    const json& d = field(j, "prompt_digests", type);
    m.compare_digest = get_as<std::string>(d, "compare", type);
    m.score_digest = get_as<std::string>(d, "score", type);
    m.suffix_digest = get_as<std::string>(d, "suffix", type);
    return m;
  }
  if (type == "compare_request") {
    msg::CompareRequest m;
    m.pair_id = get_as<std::string>(j, "pair_id", type);
    m.image_a = parse_image(field(j, "image_a", type), type);
    m.image_b = parse_image(field(j, "image_b", type), type);
    m.k = get_as<int>(j, "k", type);
    m.seed = get_as<std::uint64_t>(j, "seed", type);
    return m;
  }
  if (type == "compare_response") {
    msg::CompareResponse m;
    const json& votes = field(j, "votes", type);
    if (!votes.is_array()) fail(ErrorKind::kProtocol, "votes must be an array");
    for (const auto& v : votes) {
      int vote = -1;
      if (v.is_number_integer() && (v.get<std::int64_t>() == 0 || v.get<std::int64_t>() == 1))
        vote = v.get<int>();
      m.votes.push_back(vote);
    }
    return m;
  }
  if (type == "score_request") {
    msg::ScoreRequest m;
    m.image = parse_image(field(j, "image", type), type);
    m.k = get_as<int>(j, "k", type);
    m.seed = get_as<std::uint64_t>(j, "seed", type);
    return m;
  }
  if (type == "score_response") {
    msg::ScoreResponse m;
    const json& scores = field(j, "scores", type);
    if (!scores.is_array()) fail(ErrorKind::kProtocol, "scores must be an array");
    for (const auto& s : scores)
      m.scores.push_back(s.is_number() ? std::optional<double>(s.get<double>()) : std::nullopt);
    if (j.contains("log_probs") && !j["log_probs"].is_null())
      m.log_probs = get_as<std::vector<double>>(j, "log_probs", type);
    if (j.contains("bins") && !j["bins"].is_null())
      m.bins = get_as<std::vector<int>>(j, "bins", type);
    return m;
  }
  if (type == "advantage_export") {
    msg::AdvantageExportMsg m;
    m.payload.round = get_as<int>(j, "round", type);
    m.payload.batch = get_as<int>(j, "batch", type);
    m.payload.trajectory_ids = get_as<std::vector<std::string>>(j, "trajectory_ids", type);
    m.payload.advantages = get_as<std::vector<double>>(j, "advantages", type);
    if (m.payload.trajectory_ids.size() != m.payload.advantages.size())
      fail(ErrorKind::kProtocol, "advantage_export: trajectory_ids and advantages differ in length");
    if (j.contains("log_probs") && !j["log_probs"].is_null())
      m.payload.log_probs = get_as<std::vector<double>>(j, "log_probs", type);
    return m;
  }
  if (type == "ack") return msg::Ack{};
  if (type == "shutdown") return msg::Shutdown{};
  if (type == "error") return msg::ErrorReply{get_as<std::string>(j, "message", type)};
  fail(ErrorKind::kProtocol, "unknown message type '" + std::string(type) + "'");
}

}  // namespace

std::string_view BridgeMessage::type() const { return kTypeNames[body.index()]; }

std::string serialize(const BridgeMessage& message) {
  json j = json::object();
  j["type"] = std::string(message.type());
  j["id"] = message.id ? json(*message.id) : json(nullptr);
  std::visit(ToJson{j}, message.body);
  return j.dump();
}

BridgeMessage parse_message(std::string_view line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::kProtocol, std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) fail(ErrorKind::kProtocol, "message must be a JSON object");
  BridgeMessage out;
  const auto id = j.find("id");
  if (id != j.end() && !id->is_null()) {
    if (!id->is_number_integer()) fail(ErrorKind::kProtocol, "message id must be an integer");
    out.id = id->get<std::int64_t>();
  }
  const auto type = get_as<std::string>(j, "type", "message");
  out.body = parse_body(j, type);
  return out;
}

// ---------------------------------------------------------------------------
// Transports

void StreamTransport::send_line(const std::string& line) {
  out_ << line << '\n';
  out_.flush();
  if (!out_) fail(ErrorKind::kSessionAborted, "bridge output stream failed");
}

std::optional<std::string> StreamTransport::receive_line(std::chrono::milliseconds) {
  std::string line;
  if (!std::getline(in_, line)) {
    if (!line.empty()) fail(ErrorKind::kSessionAborted, "bridge closed mid-line");
    return std::nullopt;
  }
  return line;
}

FdTransport::FdTransport(int read_fd, int write_fd, bool owns_fds)
    : read_fd_(read_fd), write_fd_(write_fd), owns_(owns_fds) {}

FdTransport::~FdTransport() { close(); }

void FdTransport::close() {
  if (owns_) {
    if (read_fd_ >= 0) ::close(read_fd_);
    if (write_fd_ >= 0 && write_fd_ != read_fd_) ::close(write_fd_);
  }
  read_fd_ = write_fd_ = -1;
}

void FdTransport::send_line(const std::string& line) {
  if (write_fd_ < 0) fail(ErrorKind::kSessionAborted, "bridge transport is closed");
  const std::string data = line + '\n';
  std::size_t sent = 0;
  bool socket = true;
  while (sent < data.size()) {
    ssize_t n = socket ? ::send(write_fd_, data.data() + sent, data.size() - sent, MSG_NOSIGNAL)
                       : ::write(write_fd_, data.data() + sent, data.size() - sent);
    if (n < 0 && socket && errno == ENOTSOCK) {
      socket = false;
      continue;
    }
    if (n < 0 && errno == EINTR) continue;
    if (n < 0)
      fail(ErrorKind::kSessionAborted, std::string("bridge write failed: ") + std::strerror(errno));
    sent += static_cast<std::size_t>(n);
  }
}

std::optional<std::string> FdTransport::receive_line(std::chrono::milliseconds timeout) {
  const auto deadline = Clock::now() + timeout;
  for (;;) {
    const auto nl = buffer_.find('\n');
    if (nl != std::string::npos) {
      std::string line = buffer_.substr(0, nl);
      buffer_.erase(0, nl + 1);
      return line;
    }
    if (eof_ || read_fd_ < 0) {
      if (!buffer_.empty()) {
        buffer_.clear();
        fail(ErrorKind::kSessionAborted, "bridge closed mid-line");
      }
      return std::nullopt;
    }
    const auto left =
        std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now()).count();
    if (left <= 0) fail(ErrorKind::kTimeout, "bridge peer did not answer in time");
    pollfd pfd{read_fd_, POLLIN, 0};
    const int ready = ::poll(&pfd, 1, static_cast<int>(std::min<long long>(left, INT_MAX)));
    if (ready < 0) {
      if (errno == EINTR) continue;
      fail(ErrorKind::kSessionAborted, std::string("bridge poll failed: ") + std::strerror(errno));
    }
    if (ready == 0) fail(ErrorKind::kTimeout, "bridge peer did not answer in time");
    char chunk[65536];
    const ssize_t n = ::read(read_fd_, chunk, sizeof chunk);
    if (n < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      if (errno == ECONNRESET) {
        eof_ = true;
        continue;
      }
      fail(ErrorKind::kSessionAborted, std::string("bridge read failed: ") + std::strerror(errno));
    }
    if (n == 0) eof_ = true;
    buffer_.append(chunk, static_cast<std::size_t>(n));
  }
}

std::pair<std::unique_ptr<FdTransport>, std::unique_ptr<FdTransport>> make_socket_pair() {
  int sv[2];
  if (::socketpair(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0, sv) != 0)
    fail(ErrorKind::kIo, std::string("socketpair: ") + std::strerror(errno));
  return {std::make_unique<FdTransport>(sv[0], sv[0], true),
          std::make_unique<FdTransport>(sv[1], sv[1], true)};
}

namespace {

sockaddr_un unix_address(const std::string& path) {
  sockaddr_un addr{};
  addr.sun_family = AF_UNIX;
  if (path.empty() || path.size() >= sizeof addr.sun_path)
    fail(ErrorKind::kConfig, "unix socket path is empty or too long: " + path);
  std::memcpy(addr.sun_path, path.c_str(), path.size() + 1);
  return addr;
}

}  // namespace

std::unique_ptr<FdTransport> connect_unix(const std::string& path) {
  const sockaddr_un addr = unix_address(path);
  const int fd = ::socket(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (fd < 0) fail(ErrorKind::kIo, std::string("socket: ") + std::strerror(errno));
  if (::connect(fd, reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0) {
    const int err = errno;
    ::close(fd);
    fail(ErrorKind::kIo, "cannot connect to " + path + ": " + std::strerror(err));
  }
  return std::make_unique<FdTransport>(fd, fd, true);
}

std::unique_ptr<FdTransport> accept_unix(const std::string& path,
                                         std::chrono::milliseconds timeout) {
  const sockaddr_un addr = unix_address(path);
  const int fd = ::socket(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (fd < 0) fail(ErrorKind::kIo, std::string("socket: ") + std::strerror(errno));
  ::unlink(path.c_str());
  auto cleanup = [&] {
    ::close(fd);
    ::unlink(path.c_str());
  };
  if (::bind(fd, reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0 ||
      ::listen(fd, 1) != 0) {
    const int err = errno;
    cleanup();
    fail(ErrorKind::kIo, "cannot listen on " + path + ": " + std::strerror(err));
  }
  pollfd pfd{fd, POLLIN, 0};
  const int ready = ::poll(&pfd, 1, static_cast<int>(std::min<long long>(timeout.count(), INT_MAX)));
  if (ready <= 0) {
    cleanup();
    fail(ErrorKind::kTimeout, "no bridge peer connected to " + path);
  }
  const int conn = ::accept4(fd, nullptr, nullptr, SOCK_CLOEXEC);
  const int err = errno;
  cleanup();
  if (conn < 0) fail(ErrorKind::kIo, std::string("accept: ") + std::strerror(err));
  return std::make_unique<FdTransport>(conn, conn, true);
}

ChildProcessTransport::ChildProcessTransport(const std::string& command) {
  int sv[2];
  if (::socketpair(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0, sv) != 0)
    fail(ErrorKind::kIo, std::string("socketpair: ") + std::strerror(errno));
  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_adddup2(&actions, sv[1], STDIN_FILENO);
  posix_spawn_file_actions_adddup2(&actions, sv[1], STDOUT_FILENO);
  std::string cmd = command;
  char sh[] = "/bin/sh";
  char dash_c[] = "-c";
  char* argv[] = {sh, dash_c, cmd.data(), nullptr};
  pid_t pid = -1;
  const int rc = ::posix_spawn(&pid, "/bin/sh", &actions, nullptr, argv, environ);
  posix_spawn_file_actions_destroy(&actions);
  ::close(sv[1]);
  if (rc != 0) {
    ::close(sv[0]);
    fail(ErrorKind::kIo, "cannot start bridge peer: " + std::string(std::strerror(rc)));
  }
  pid_ = pid;
  io_ = std::make_unique<FdTransport>(sv[0], sv[0], true);
}

ChildProcessTransport::~ChildProcessTransport() { finish(); }

int ChildProcessTransport::finish() {
  if (status_) return *status_;
  io_->close();
  int status = 0;
  while (::waitpid(pid_, &status, 0) < 0 && errno == EINTR) {
  }
  status_ = WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
  return *status_;
}

std::unique_ptr<Transport> open_bridge_endpoint(const std::string& spec) {
  constexpr std::string_view kExec = "bridge:exec:";
  constexpr std::string_view kUnix = "bridge:unix:";
  if (spec.starts_with(kExec) && spec.size() > kExec.size())
    return std::make_unique<ChildProcessTransport>(spec.substr(kExec.size()));
  if (spec.starts_with(kUnix) && spec.size() > kUnix.size())
    return connect_unix(spec.substr(kUnix.size()));
  fail(ErrorKind::kConfig,
       "backend must be 'builtin', 'bridge:exec:<command>' or 'bridge:unix:<path>', got '" + spec + "'");
}

// ---------------------------------------------------------------------------
// Server

namespace {

std::optional<std::int64_t> salvage_id(const std::string& line) {
  const json j = json::parse(line, nullptr, false);
  if (j.is_object() && j.contains("id") && j["id"].is_number_integer())
    return j["id"].get<std::int64_t>();
  return std::nullopt;
}

}  // namespace

SessionSummary serve_policy_over_bridge(Transport& transport, PolicyBackend& policy,
                                        const ServeOptions& options) {
  SessionSummary summary;
  for (;;) {
    const auto line = transport.receive_line(options.idle_timeout);
    if (!line) fail(ErrorKind::kSessionAborted, "bridge peer disconnected without shutdown");
    if (line->find_first_not_of(" \t\r") == std::string::npos) continue;

    BridgeMessage in;
    auto send = [&](std::optional<std::int64_t> id, MessageBody body) {
      transport.send_line(serialize({id, std::move(body)}));
    };
    auto error = [&](const std::string& message) {
      ++summary.errors;
      send(in.id, msg::ErrorReply{message});
    };
    try {
      in = parse_message(*line);
    } catch (const Error& e) {
      ++summary.errors;
      send(salvage_id(*line), msg::ErrorReply{e.what()});
      continue;
    }

    if (const auto* hs = std::get_if<msg::Handshake>(&in.body)) {
      if (hs->protocol_version != kProtocolVersion) {
        error("unsupported protocol_version " + std::to_string(hs->protocol_version));
        continue;
      }
      summary.handshake_received = true;
      summary.prompts = hs->prompts;
      send(in.id, msg::HandshakeAck{kProtocolVersion, sha256_hex(hs->prompts.compare_prompt),
                                    sha256_hex(hs->prompts.score_prompt),
                                    sha256_hex(hs->prompts.suffix)});
      continue;
    }
    if (std::holds_alternative<msg::Shutdown>(in.body)) {
      send(in.id, msg::Ack{});
      return summary;
    }
    if (!summary.handshake_received) {
      error("handshake required before " + std::string(in.type()));
      continue;
    }
    try {
      if (const auto* req = std::get_if<msg::CompareRequest>(&in.body)) {
        const auto votes = policy.compare(req->image_a, req->image_b, req->k, req->seed);
        msg::CompareResponse out;
        for (Vote v : votes) out.votes.push_back(static_cast<int>(v));
        ++summary.compare_requests;
        ++summary.requests_served;
        send(in.id, std::move(out));
      } else if (const auto* req = std::get_if<msg::ScoreRequest>(&in.body)) {
        const auto draws = policy.sample_scores(req->image, req->k, req->seed);
        msg::ScoreResponse out;
        for (double s : draws.scores) out.scores.emplace_back(s);
        out.log_probs = draws.log_probs;
        if (!draws.bins.empty()) out.bins = draws.bins;
        ++summary.score_requests;
        ++summary.requests_served;
        send(in.id, std::move(out));
      } else if (const auto* exp = std::get_if<msg::AdvantageExportMsg>(&in.body)) {
        if (options.on_advantages) options.on_advantages(exp->payload);
        ++summary.advantage_exports;
        ++summary.requests_served;
        send(in.id, msg::Ack{});
      } else {
        error("unexpected message type '" + std::string(in.type()) + "'");
      }
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::kSessionAborted) throw;
      error(e.what());
    }
  }
}

// ---------------------------------------------------------------------------
// Client

RemotePolicyAdapter::RemotePolicyAdapter(Transport& transport, AdapterOptions options)
    : transport_(transport), options_(std::move(options)) {
  msg::Handshake hs;
  hs.prompts = options_.prompts;
  hs.budget_k = options_.budget_k;
  hs.score_scale = options_.scale;
  open_ = true;
  const BridgeMessage reply = request(hs);
  const auto* ack = std::get_if<msg::HandshakeAck>(&reply.body);
  if (!ack) fail(ErrorKind::kProtocol, "expected handshake_ack, got " + std::string(reply.type()));
  if (ack->protocol_version != kProtocolVersion)
    fail(ErrorKind::kProtocol, "peer speaks protocol_version " + std::to_string(ack->protocol_version));
  if (ack->compare_digest != sha256_hex(hs.prompts.compare_prompt) ||
      ack->score_digest != sha256_hex(hs.prompts.score_prompt) ||
      ack->suffix_digest != sha256_hex(hs.prompts.suffix))
    fail(ErrorKind::kProtocol, "peer acknowledged different prompts");
  ack_ = *ack;
}

RemotePolicyAdapter::~RemotePolicyAdapter() {
  try {
    shutdown();
  } catch (...) {
  }
}

void RemotePolicyAdapter::shutdown() {
  if (!open_ || aborted_) return;
  open_ = false;
  const BridgeMessage reply = request(msg::Shutdown{});
  if (!std::holds_alternative<msg::Ack>(reply.body))
    fail(ErrorKind::kProtocol, "expected ack to shutdown, got " + std::string(reply.type()));
}

BridgeMessage RemotePolicyAdapter::request(MessageBody body) {
  if (aborted_) fail(ErrorKind::kSessionAborted, "bridge session was aborted");
  const std::int64_t id = next_id_++;
  const std::string kind = std::string(BridgeMessage{id, body}.type());
  transport_.send_line(serialize({id, std::move(body)}));
  const auto deadline = Clock::now() + options_.timeout;
  for (;;) {
    std::optional<std::string> line;
    try {
      const auto left = std::max(std::chrono::milliseconds(0),
                                 std::chrono::duration_cast<std::chrono::milliseconds>(
                                     deadline - Clock::now()));
      line = transport_.receive_line(left);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::kTimeout &&
          ++consecutive_timeouts_ >= options_.max_consecutive_timeouts) {
        aborted_ = true;
        fail(ErrorKind::kSessionAborted,
             std::to_string(consecutive_timeouts_) + " consecutive bridge timeouts");
      }
      if (e.kind() == ErrorKind::kSessionAborted) aborted_ = true;
      throw;
    }
    if (!line) {
      aborted_ = true;
      fail(ErrorKind::kSessionAborted, "bridge peer closed during " + kind);
    }
    BridgeMessage reply = parse_message(*line);
    // Answers to requests that already timed out are dropped.
    if (reply.id != id) {
      if (!reply.id && std::holds_alternative<msg::ErrorReply>(reply.body))
        fail(ErrorKind::kProtocol,
             "bridge peer rejected a line: " + std::get<msg::ErrorReply>(reply.body).message);
      continue;
    }
    consecutive_timeouts_ = 0;
    if (const auto* err = std::get_if<msg::ErrorReply>(&reply.body))
      fail(ErrorKind::kProtocol, "bridge peer error on " + kind + ": " + err->message);
    return reply;
  }
}

std::vector<Vote> RemotePolicyAdapter::compare(const ImageRef& first, const ImageRef& second,
                                               int k, std::uint64_t seed) {
  msg::CompareRequest req{std::to_string(first.id) + ":" + std::to_string(second.id), first,
                          second, k, seed};
  const BridgeMessage reply = request(std::move(req));
  const auto* res = std::get_if<msg::CompareResponse>(&reply.body);
  if (!res) fail(ErrorKind::kProtocol, "expected compare_response, got " + std::string(reply.type()));
  if (res->votes.size() > static_cast<std::size_t>(k))
    fail(ErrorKind::kProtocol, "peer returned " + std::to_string(res->votes.size()) +
                                   " votes for k=" + std::to_string(k));
  std::vector<Vote> votes;
  votes.reserve(res->votes.size());
  for (int v : res->votes)
    votes.push_back(v == 0 ? Vote::kFirst : v == 1 ? Vote::kSecond : Vote::kInvalid);
  return votes;
}

ScoreDraws RemotePolicyAdapter::sample_scores(const ImageRef& image, int k, std::uint64_t seed) {
  const BridgeMessage reply = request(msg::ScoreRequest{image, k, seed});
  const auto* res = std::get_if<msg::ScoreResponse>(&reply.body);
  if (!res) fail(ErrorKind::kProtocol, "expected score_response, got " + std::string(reply.type()));
  const std::size_t n = res->scores.size();
  if (n > static_cast<std::size_t>(k))
    fail(ErrorKind::kProtocol, "peer returned " + std::to_string(n) + " scores for k=" + std::to_string(k));
  if (res->log_probs && res->log_probs->size() != n)
    fail(ErrorKind::kProtocol, "log_probs length does not match scores");
  if (res->bins && res->bins->size() != n)
    fail(ErrorKind::kProtocol, "bins length does not match scores");
  ScoreDraws out;
  if (res->log_probs) out.log_probs.emplace();
  else sampling_only_ = true;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = res->scores[i];
    if (!s || !(*s >= options_.scale.min_score && *s <= options_.scale.max_score)) continue;
    out.scores.push_back(*s);
    if (res->bins) out.bins.push_back((*res->bins)[i]);
    if (out.log_probs) out.log_probs->push_back((*res->log_probs)[i]);
  }
  return out;
}

void RemotePolicyAdapter::export_advantages(const AdvantageExport& batch) {
  const BridgeMessage reply = request(msg::AdvantageExportMsg{batch});
  if (!std::holds_alternative<msg::Ack>(reply.body))
    fail(ErrorKind::kProtocol, "expected ack to advantage_export, got " + std::string(reply.type()));
  ++exports_sent_;
}

}  // namespace evoq
