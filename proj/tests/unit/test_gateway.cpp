#include <doctest.h>

#include <httplib.h>

#include <future>
#include <thread>

#include "check.hpp"
#include "prefrl/error.hpp"
#include "prefrl/label_gateway.hpp"

using namespace prefrl;
using prefrl::testing::random_segment;
using json = nlohmann::json;

namespace {

SegmentPair fixture_pair(std::uint64_t id, std::size_t k = 25) {
  Rng rng(id);
  return {random_segment(rng, k, 2, 2, static_cast<std::int64_t>(2 * id)),
          random_segment(rng, k, 2, 2, static_cast<std::int64_t>(2 * id + 1)), id};
}

std::string label_body(std::uint64_t id, const char* choice) {
  return json{{"pair_id", id}, {"choice", choice}}.dump();
}

}  // namespace

TEST_SUITE("gateway") {
  TEST_CASE("GET /api/pair serves the oldest pending pair, then 204") {
    LabelGateway gateway("pointgoal", 0.1);
    CHECK(gateway.handle_get_pair().status == 204);
    gateway.enqueue(fixture_pair(7));
    gateway.enqueue(fixture_pair(8));
    const GatewayResponse r = gateway.handle_get_pair();
    CHECK(r.status == 200);
    CHECK(r.body["pair_id"] == 7);
    CHECK(r.body["env"] == "pointgoal");
    CHECK(r.body["dt"] == 0.1);
    REQUIRE(r.body["first"]["frames"].size() == 25);
    CHECK(r.body["first"]["frames"][3]["t"].get<double>() == doctest::Approx(0.3));
    CHECK(r.body["second"]["frames"][0]["state"].size() == 2);
  }

  TEST_CASE("POST /api/label accepts each of the four choices once") {
    LabelGateway gateway("pointgoal", 0.1);
    const char* choices[] = {"first", "second", "equal", "incomparable"};
    for (std::uint64_t id = 1; id <= 4; ++id) gateway.enqueue(fixture_pair(id));
    for (std::uint64_t id = 1; id <= 4; ++id) {
      const GatewayResponse r = gateway.handle_post_label(label_body(id, choices[id - 1]));
      CHECK(r.status == 200);
      CHECK(r.body["choice"] == choices[id - 1]);
      CHECK(gateway.wait_for_label(id, std::chrono::milliseconds(0)) == parse_label_choice(choices[id - 1]));
    }
    CHECK(gateway.pending() == 0);
  }

  TEST_CASE("duplicate, unknown and malformed submissions") {
    LabelGateway gateway("pointgoal", 0.1);
    gateway.enqueue(fixture_pair(3));
    CHECK(gateway.handle_post_label(label_body(3, "first")).status == 200);
    const GatewayResponse dup = gateway.handle_post_label(label_body(3, "second"));
    CHECK(dup.status == 409);
    CHECK(gateway.wait_for_label(3, std::chrono::milliseconds(0)) == LabelChoice::first);
    CHECK(gateway.handle_post_label(label_body(99, "first")).status == 404);
    CHECK(gateway.handle_post_label("{not json").status == 400);
    CHECK(gateway.handle_post_label(R"({"pair_id": 3})").status == 400);
    CHECK(gateway.handle_post_label(R"({"pair_id": -1, "choice": "first"})").status == 400);
    CHECK(gateway.handle_post_label(R"({"pair_id": 3, "choice": "both"})").status == 400);
    CHECK_THROWS_AS(gateway.enqueue(fixture_pair(3)), ContractViolation);
  }

  TEST_CASE("status passes the published document through and adds pending") {
    LabelGateway gateway("pendulum", 0.05);
    gateway.set_status({{"episode", 4}, {"budgets", {{"scheduled", 10}}}, {"gan_test", json::array()}, {"handoff", false}});
    gateway.enqueue(fixture_pair(1));
    const GatewayResponse r = gateway.handle_status();
    CHECK(r.status == 200);
    CHECK(r.body["episode"] == 4);
    CHECK(r.body["budgets"]["scheduled"] == 10);
    CHECK(r.body["handoff"] == false);
    CHECK(r.body["pending"] == 1);
  }

  TEST_CASE("waiting times out without a label and wakes on one") {
    LabelGateway gateway("pointgoal", 0.1);
    gateway.enqueue(fixture_pair(5));
    CHECK_FALSE(gateway.wait_for_label(5, std::chrono::milliseconds(20)).has_value());
    auto waiter = std::async(std::launch::async, [&] { return gateway.wait_for_label(5, std::chrono::seconds(10)); });
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
    gateway.handle_post_label(label_body(5, "equal"));
    CHECK(waiter.get() == LabelChoice::equal);
  }

  TEST_CASE("the endpoints are served over HTTP") {
    LabelGateway gateway("pointgoal", 0.1);
    const int port = gateway.start("127.0.0.1", 0);
    CHECK(gateway.running());
    httplib::Client client("127.0.0.1", port);
    auto empty = client.Get("/api/pair");
    REQUIRE(empty);
    CHECK(empty->status == 204);
    gateway.enqueue(fixture_pair(11));
    auto pair = client.Get("/api/pair");
    REQUIRE(pair);
    CHECK(pair->status == 200);
    CHECK(json::parse(pair->body)["pair_id"] == 11);
    auto ok = client.Post("/api/label", label_body(11, "second"), "application/json");
    REQUIRE(ok);
    CHECK(ok->status == 200);
    auto dup = client.Post("/api/label", label_body(11, "first"), "application/json");
    REQUIRE(dup);
    CHECK(dup->status == 409);
    auto status = client.Get("/api/status");
    REQUIRE(status);
    CHECK(json::parse(status->body)["pending"] == 0);
    gateway.stop();
    CHECK_FALSE(gateway.running());
  }
}
