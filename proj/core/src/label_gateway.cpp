#include "prefrl/label_gateway.hpp"

#include <httplib.h>

#include "prefrl/error.hpp"

namespace prefrl {

using json = nlohmann::json;

struct LabelGateway::Impl {
  httplib::Server server;
};

LabelGateway::LabelGateway(std::string env_name, double dt)
    : env_name_(std::move(env_name)), dt_(dt) {}

LabelGateway::~LabelGateway() { stop(); }

int LabelGateway::start(const std::string& host, int port) {
  require(!impl_, "label gateway already started");
  impl_ = std::make_unique<Impl>();
  auto send = [](httplib::Response& res, const GatewayResponse& reply) {
    res.status = reply.status;
    if (!reply.body.is_null()) res.set_content(reply.body.dump(), "application/json");
  };
  impl_->server.Get("/api/pair", [this, send](const httplib::Request&, httplib::Response& res) {
    send(res, handle_get_pair());
  });
  impl_->server.Post("/api/label", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, handle_post_label(req.body));
  });
  impl_->server.Get("/api/status", [this, send](const httplib::Request&, httplib::Response& res) {
    send(res, handle_status());
  });

  const int bound = port == 0 ? impl_->server.bind_to_any_port(host)
                              : (impl_->server.bind_to_port(host, port) ? port : -1);
  if (bound < 0) {
    impl_.reset();
    throw ChannelUnavailable("label gateway cannot bind " + host + ":" + std::to_string(port));
  }
  port_ = bound;
  server_thread_ = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return port_;
}

void LabelGateway::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (server_thread_.joinable()) server_thread_.join();
  impl_.reset();
}

bool LabelGateway::running() const { return impl_ && impl_->server.is_running(); }

void LabelGateway::enqueue(const SegmentPair& pair) {
  std::lock_guard lock(mutex_);
  require(!ids_.contains(pair.pair_id), "pair id " + std::to_string(pair.pair_id) + " was already offered");
  ids_.emplace(pair.pair_id, std::nullopt);
  pending_.push_back(pair);
}

std::optional<LabelChoice> LabelGateway::wait_for_label(std::uint64_t pair_id,
                                                        std::chrono::milliseconds timeout) {
  std::unique_lock lock(mutex_);
  require(ids_.contains(pair_id), "pair id " + std::to_string(pair_id) + " was never offered");
  labeled_.wait_for(lock, timeout, [&] { return ids_.at(pair_id).has_value(); });
  return ids_.at(pair_id);
}

void LabelGateway::set_status(json status) {
  std::lock_guard lock(mutex_);
  status_ = std::move(status);
}

std::size_t LabelGateway::pending() const {
  std::lock_guard lock(mutex_);
  return pending_.size();
}

json LabelGateway::pair_payload(const SegmentPair& pair, const std::string& env_name, double dt) {
  auto frames = [dt](const Segment& segment) {
    json out = json::array();
    for (std::size_t i = 0; i < segment.length(); ++i) {
      const auto s = segment.state(i);
      out.push_back({{"t", static_cast<double>(i) * dt}, {"state", Vec(s.begin(), s.end())}});
    }
    return out;
  };
  return {{"pair_id", pair.pair_id},
          {"env", env_name},
          {"dt", dt},
          {"first", {{"frames", frames(pair.first)}}},
          {"second", {{"frames", frames(pair.second)}}}};
}

GatewayResponse LabelGateway::handle_get_pair() const {
  std::lock_guard lock(mutex_);
  if (pending_.empty()) return {204, nullptr};
  return {200, pair_payload(pending_.front(), env_name_, dt_)};
}

GatewayResponse LabelGateway::handle_post_label(const std::string& body) {
  json request;
  try {
    request = json::parse(body);
  } catch (const json::exception&) {
    return {400, {{"error", "body is not valid JSON"}}};
  }
  if (!request.is_object() || !request.contains("pair_id") || !request["pair_id"].is_number_unsigned())
    return {400, {{"error", "pair_id must be a non-negative integer"}}};
  if (!request.contains("choice") || !request["choice"].is_string())
    return {400, {{"error", "choice must be one of first, second, equal, incomparable"}}};
  const auto choice = parse_label_choice(request["choice"].get<std::string>());
  if (!choice) return {400, {{"error", "choice must be one of first, second, equal, incomparable"}}};
  const auto pair_id = request["pair_id"].get<std::uint64_t>();

  std::lock_guard lock(mutex_);
  auto it = ids_.find(pair_id);
  if (it == ids_.end()) return {404, {{"error", "unknown pair id"}, {"pair_id", pair_id}}};
  if (it->second) return {409, {{"error", "pair already labeled"}, {"pair_id", pair_id}}};
  it->second = *choice;
  std::erase_if(pending_, [&](const SegmentPair& p) { return p.pair_id == pair_id; });
  labeled_.notify_all();
  return {200,
          {{"accepted", true},
           {"pair_id", pair_id},
           {"choice", std::string(to_string(*choice))},
           {"pending", pending_.size()}}};
}

GatewayResponse LabelGateway::handle_status() const {
  std::lock_guard lock(mutex_);
  json status = status_;
  status["pending"] = pending_.size();
  return {200, status};
}

}  // namespace prefrl
