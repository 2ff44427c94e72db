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

#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "evoq/backend.hpp"
#include "evoq/policy.hpp"

namespace evoq {

inline constexpr int kProtocolVersion = 1;

struct PromptTemplates {
  std::string compare_prompt;
  std::string score_prompt;
  std::string suffix;

  // The prompts a vision-language peer is expected to use.
  static PromptTemplates standard();
  bool operator==(const PromptTemplates&) const = default;
};

struct ScoreScaleInfo {
  double min_score = 1.0;
  double max_score = 5.0;
  int n_bins = 17;
  bool operator==(const ScoreScaleInfo&) const = default;
};

namespace msg {

struct Handshake {
  int protocol_version = kProtocolVersion;
  PromptTemplates prompts = PromptTemplates::standard();
  int budget_k = 32;
  ScoreScaleInfo score_scale;
  bool operator==(const Handshake&) const = default;
};

struct HandshakeAck {
  int protocol_version = kProtocolVersion;
  // sha256 of each received prompt, keyed compare/score/suffix.
  std::string compare_digest;
  std::string score_digest;
  std::string suffix_digest;
  bool operator==(const HandshakeAck&) const = default;
};

struct CompareRequest {
  std::string pair_id;
  ImageRef image_a;
  ImageRef image_b;
  int k = 0;
  std::uint64_t seed = 0;
  bool operator==(const CompareRequest&) const = default;
};

struct CompareResponse {
  // 0, 1, or -1 for anything else the peer sent (null, 2, "a", ...).
  std::vector<int> votes;
  bool operator==(const CompareResponse&) const = default;
};

struct ScoreRequest {
  ImageRef image;
  int k = 0;
  std::uint64_t seed = 0;
  bool operator==(const ScoreRequest&) const = default;
};

struct ScoreResponse {
  // nullopt marks a score the peer flagged invalid or sent out of range.
  std::vector<std::optional<double>> scores;
  std::optional<std::vector<double>> log_probs;
  std::optional<std::vector<int>> bins;
  bool operator==(const ScoreResponse&) const = default;
};

struct AdvantageExportMsg {
  AdvantageExport payload;
  bool operator==(const AdvantageExportMsg&) const = default;
};

struct Ack {
  bool operator==(const Ack&) const = default;
};

struct Shutdown {
  bool operator==(const Shutdown&) const = default;
};

struct ErrorReply {
  std::string message;
  bool operator==(const ErrorReply&) const = default;
};

}  // namespace msg

using MessageBody = std::variant<msg::Handshake, msg::HandshakeAck, msg::CompareRequest,
                                 msg::CompareResponse, msg::ScoreRequest, msg::ScoreResponse,
                                 msg::AdvantageExportMsg, msg::Ack, msg::Shutdown, msg::ErrorReply>;

/// One line of the wire protocol. Error replies to unparseable lines carry no id.
struct BridgeMessage {
  std::optional<std::int64_t> id;
  MessageBody body;

  std::string_view type() const;
  bool operator==(const BridgeMessage&) const = default;
};

/// Single-line JSON, keys sorted.
std::string serialize(const BridgeMessage& message);
/// Throws kProtocol on malformed input. The message text names the problem.
BridgeMessage parse_message(std::string_view line);

// ---------------------------------------------------------------------------
// Transports

class Transport {
 public:
  virtual ~Transport() = default;
  virtual void send_line(const std::string& line) = 0;
  /// Next line without its newline, or nullopt once the peer has closed.
  /// Throws kTimeout when nothing complete arrives in time.
  virtual std::optional<std::string> receive_line(std::chrono::milliseconds timeout) = 0;
};

/// Blocking iostream pair. Timeouts are not enforced.
class StreamTransport final : public Transport {
 public:
  StreamTransport(std::istream& in, std::ostream& out) : in_(in), out_(out) {}
  void send_line(const std::string& line) override;
  std::optional<std::string> receive_line(std::chrono::milliseconds timeout) override;

 private:
  std::istream& in_;
  std::ostream& out_;
};

/// Raw file descriptors (pipes or sockets) with poll-based timeouts.
class FdTransport final : public Transport {
 public:
  FdTransport(int read_fd, int write_fd, bool owns_fds);
  ~FdTransport() override;
  FdTransport(const FdTransport&) = delete;
  FdTransport& operator=(const FdTransport&) = delete;

  void send_line(const std::string& line) override;
  std::optional<std::string> receive_line(std::chrono::milliseconds timeout) override;
  void close();

 private:
  int read_fd_;
  int write_fd_;
  bool owns_;
  std::string buffer_;
  bool eof_ = false;
};

/// Two connected ends of a local socket pair.
std::pair<std::unique_ptr<FdTransport>, std::unique_ptr<FdTransport>> make_socket_pair();

std::unique_ptr<FdTransport> connect_unix(const std::string& path);

/// Binds `path`, accepts one connection, and removes the socket file.
std::unique_ptr<FdTransport> accept_unix(const std::string& path,
                                         std::chrono::milliseconds timeout);

/// `/bin/sh -c command` with its stdin/stdout connected to the returned
/// transport. The child is reaped on destruction.
class ChildProcessTransport final : public Transport {
 public:
  explicit ChildProcessTransport(const std::string& command);
  ~ChildProcessTransport() override;

  void send_line(const std::string& line) override { io_->send_line(line); }
  std::optional<std::string> receive_line(std::chrono::milliseconds timeout) override {
    return io_->receive_line(timeout);
  }
  /// Closes the channel and waits for the child. Returns its exit status.
  int finish();

 private:
  std::unique_ptr<FdTransport> io_;
  int pid_ = -1;
  std::optional<int> status_;
};

/// Parses "bridge:exec:<command>" or "bridge:unix:<path>".
std::unique_ptr<Transport> open_bridge_endpoint(const std::string& spec);

// ---------------------------------------------------------------------------
// Server side

struct SessionSummary {
  int requests_served = 0;  // compare + score + advantage_export
  int compare_requests = 0;
  int score_requests = 0;
  int advantage_exports = 0;
  int errors = 0;
  bool handshake_received = false;
  std::optional<PromptTemplates> prompts;
};

struct ServeOptions {
  std::chrono::milliseconds idle_timeout{std::chrono::hours(24)};
  std::function<void(const AdvantageExport&)> on_advantages;
};

/// Answers requests with `policy` until a shutdown message. A malformed line
/// gets an error reply and the session continues. Throws kSessionAborted if
/// the peer disconnects before shutting down.
SessionSummary serve_policy_over_bridge(Transport& transport, PolicyBackend& policy,
                                        const ServeOptions& options = {});

// ---------------------------------------------------------------------------
// Client side

struct AdapterOptions {
  std::chrono::milliseconds timeout{std::chrono::seconds(60)};
  int budget_k = 32;
  PromptTemplates prompts = PromptTemplates::standard();
  ScoreScaleInfo scale;
  int max_consecutive_timeouts = 3;
};

/// PolicyBackend backed by a bridge peer. One request in flight at a time.
class RemotePolicyAdapter final : public PolicyBackend {
 public:
  /// Performs the handshake.
  RemotePolicyAdapter(Transport& transport, AdapterOptions options = {});
  /// Sends shutdown if the session is still open.
  ~RemotePolicyAdapter() override;

  std::vector<Vote> compare(const ImageRef& first, const ImageRef& second, int k,
                            std::uint64_t seed) override;
  /// Invalid scores are dropped, together with their log-probabilities.
  ScoreDraws sample_scores(const ImageRef& image, int k, std::uint64_t seed) override;
  void export_advantages(const AdvantageExport& batch) override;

  /// True once a score response arrived without log-probabilities.
  bool sampling_only() const { return sampling_only_; }
  int exports_sent() const { return exports_sent_; }
  const msg::HandshakeAck& handshake() const { return ack_; }
  void shutdown();

 private:
  BridgeMessage request(MessageBody body);

  Transport& transport_;
  AdapterOptions options_;
  msg::HandshakeAck ack_;
  std::int64_t next_id_ = 0;
  int consecutive_timeouts_ = 0;
  bool open_ = false;
  bool aborted_ = false;
  bool sampling_only_ = false;
  int exports_sent_ = 0;
};

}  // namespace evoq
