#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include <nlohmann/json.hpp>

#include "prefrl/prefdb.hpp"

namespace prefrl {

/// HTTP reply produced by a gateway handler.
struct GatewayResponse {
  int status = 200;
  nlohmann::json body;
};

/// Queue of pairs awaiting a human label, served over HTTP.
///
///   GET  /api/pair   -> 200 playback payload of the oldest pending pair,
///                       204 when nothing is pending
///   POST /api/label  <- {"pair_id": <int>, "choice": "first|second|equal|incomparable"}
///                    -> 200 accepted, 400 malformed, 404 unknown id,
///                       409 already labeled
///   GET  /api/status -> {"episode", "budgets", "gan_test", "pending", "handoff"}
///
/// Pair ids are single-use: the first accepted label wins and later
/// submissions for the same id are rejected with 409. The handlers can be
/// called directly, without a listening socket.
class LabelGateway {
public:
  LabelGateway(std::string env_name, double dt);
  ~LabelGateway();
  LabelGateway(const LabelGateway&) = delete;
  LabelGateway& operator=(const LabelGateway&) = delete;

  /// Binds and serves on a background thread. Port 0 picks a free port.
  /// Returns the bound port; throws ChannelUnavailable when binding fails.
  int start(const std::string& host, int port);
  void stop();
  [[nodiscard]] bool running() const;
  [[nodiscard]] int port() const { return port_; }

  /// Offers a pair for labeling. Throws ContractViolation on a reused id.
  void enqueue(const SegmentPair& pair);
  /// Blocks until the pair is labeled or the timeout passes.
  std::optional<LabelChoice> wait_for_label(std::uint64_t pair_id, std::chrono::milliseconds timeout);
  /// Replaces the status document served by GET /api/status.
  void set_status(nlohmann::json status);

  [[nodiscard]] std::size_t pending() const;

  GatewayResponse handle_get_pair() const;
  GatewayResponse handle_post_label(const std::string& body);
  GatewayResponse handle_status() const;

  /// Playback payload for one pair: env name, dt, pair id and two sequences
  /// of {"t", "state"} frames.
  static nlohmann::json pair_payload(const SegmentPair& pair, const std::string& env_name, double dt);

private:
  struct Impl;

  std::string env_name_;
  double dt_;
  mutable std::mutex mutex_;
  std::condition_variable labeled_;
  std::deque<SegmentPair> pending_;
  std::map<std::uint64_t, std::optional<LabelChoice>> ids_;  // every id ever offered
  nlohmann::json status_ = nlohmann::json::object();
  std::unique_ptr<Impl> impl_;
  std::thread server_thread_;
  int port_ = 0;
};

}  // namespace prefrl
