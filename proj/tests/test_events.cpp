#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <zlib.h>

#include <algorithm>
#include <cstdio>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "incr/events.hpp"
#include "incr/errors.hpp"

using namespace incr;

namespace {

std::string bid_line(const std::string& user, double t, bool submitted, bool won,
                     const std::string& extra = "") {
  std::ostringstream s;
  s << "{\"type\":\"bid\",\"user_id\":\"" << user << "\",\"t_j\":" << t
    << ",\"ghost_bid_g\":1.5,\"submitted_B\":" << (submitted ? "true" : "false")
    << ",\"submitted_bid_b\":" << (submitted ? 1.5 : 0.0) << ",\"p_win_b\":0.4,\"p_win_g\":0.4"
    << ",\"won_A\":" << (won ? "true" : "false");
  if (won) s << ",\"cost_c\":0.8,\"viewable_V\":true";
  s << ",\"p_viewable\":0.9" << extra << "}";
  return s.str();
}

std::string window_line(const std::string& user, double a, double b) {
  std::ostringstream s;
  s << "{\"type\":\"window\",\"user_id\":\"" << user << "\",\"t_start\":" << a
    << ",\"t_end\":" << b << "}";
  return s.str();
}

std::string conv_line(const std::string& user, double t, double v = 10.0, double m = 0.3) {
  std::ostringstream s;
  s << "{\"type\":\"conversion\",\"user_id\":\"" << user << "\",\"t_c\":" << t
    << ",\"value_v\":" << v << ",\"margin_m\":" << m << "}";
  return s.str();
}

std::string retarget_line(const std::string& user, double t) {
  std::ostringstream s;
  s << "{\"type\":\"retarget\",\"user_id\":\"" << user << "\",\"t_r\":" << t
    << ",\"event_kind\":\"cart\"}";
  return s.str();
}

IngestResult ingest_lines(const std::vector<std::string>& lines) {
  std::ostringstream joined;
  for (const auto& l : lines) joined << l << '\n';
  std::istringstream in(joined.str());
  return ingest(in);
}

}  // namespace

TEST_CASE("empty stream yields an empty ok result") {
  std::istringstream in("");
  auto r = ingest(in);
  CHECK(r.ok());
  CHECK(r.timelines.empty());
  CHECK(r.n_lines == 0);
}

TEST_CASE("three shuffled users group and sort correctly") {
  std::vector<std::string> lines;
  for (const std::string user : {"u2", "u3", "u1"}) {
    lines.push_back(window_line(user, 0, 1000));
    lines.push_back(bid_line(user, 700, true, true));
    lines.push_back(bid_line(user, 100, true, false));
    lines.push_back(conv_line(user, 900));
  }
  std::mt19937_64 rng(7);
  std::shuffle(lines.begin(), lines.end(), rng);
  auto r = ingest_lines(lines);
  REQUIRE(r.ok());
  REQUIRE(r.timelines.size() == 3);
  CHECK(r.timelines[0].user_id == "u1");
  CHECK(r.timelines[1].user_id == "u2");
  CHECK(r.timelines[2].user_id == "u3");
  for (const auto& t : r.timelines) {
    REQUIRE(t.bids.size() == 2);
    CHECK(t.bids[0].t_j == 100);
    CHECK(t.bids[1].t_j == 700);
    CHECK_FALSE(t.bids[0].won_A);
    CHECK(t.bids[1].won_A);
    CHECK(t.bids[1].cost_c == 0.8);
    REQUIRE(t.bids[1].viewable_V.has_value());
    CHECK(*t.bids[1].viewable_V);
    REQUIRE(t.conversions.size() == 1);
    CHECK(t.conversions[0].t_c == 900);
    CHECK(t.window_length() == 1000);
  }
}

TEST_CASE("serialized output is invariant to input permutation") {
  std::vector<std::string> lines;
  for (const std::string user : {"a", "b"}) {
    lines.push_back(window_line(user, 0, 500));
    lines.push_back(bid_line(user, 10, true, false));
    lines.push_back(bid_line(user, 10, false, false));  // same timestamp, different content
    lines.push_back(retarget_line(user, 20));
    lines.push_back(conv_line(user, 400));
  }
  auto base = serialize_to_string(ingest_lines(lines).timelines);
  CHECK(!base.empty());
  std::mt19937_64 rng(123);
  for (int rep = 0; rep < 10; ++rep) {
    std::shuffle(lines.begin(), lines.end(), rng);
    auto r = ingest_lines(lines);
    REQUIRE(r.ok());
    CHECK(serialize_to_string(r.timelines) == base);
  }
}

TEST_CASE("serialize then ingest round-trips") {
  std::vector<std::string> lines = {
      window_line("u1", 0, 2000),    bid_line("u1", 5.25, true, true),
      bid_line("u1", 17.5, true, false), retarget_line("u1", 3.125),
      conv_line("u1", 1999.5, 42.0, 0.55),
  };
  auto first = ingest_lines(lines);
  REQUIRE(first.ok());
  auto text = serialize_to_string(first.timelines);
  std::istringstream in(text);
  auto second = ingest(in);
  REQUIRE(second.ok());
  CHECK(serialize_to_string(second.timelines) == text);
  REQUIRE(second.timelines.size() == 1);
  CHECK(second.timelines[0].bids[0].t_j == 5.25);
  CHECK(second.timelines[0].conversions[0].value_v == 42.0);
  CHECK(second.timelines[0].conversions[0].margin_m == 0.55);
}

TEST_CASE("a won bid that was never submitted is rejected with its line") {
  std::vector<std::string> lines = {window_line("u1", 0, 100), bid_line("u1", 1, false, true)};
  auto r = ingest_lines(lines);
  REQUIRE(r.errors.size() == 1);
  CHECK(r.errors[0].line_no == 2);
  CHECK(r.errors[0].reason.find("won_A without submitted_B") != std::string::npos);
}

TEST_CASE("cost and viewability fields must match the win flag") {
  auto won_no_cost =
      "{\"type\":\"bid\",\"user_id\":\"u\",\"t_j\":1,\"ghost_bid_g\":1,\"submitted_B\":true,"
      "\"submitted_bid_b\":1,\"p_win_b\":0.5,\"p_win_g\":0.5,\"won_A\":true,\"viewable_V\":true,"
      "\"p_viewable\":1}";
  auto r1 = ingest_lines({window_line("u", 0, 10), won_no_cost});
  REQUIRE(r1.errors.size() == 1);
  CHECK(r1.errors[0].reason.find("cost_c") != std::string::npos);

  auto lost_with_cost = bid_line("u", 1, true, false, ",\"cost_c\":0.5");
  auto r2 = ingest_lines({window_line("u", 0, 10), lost_with_cost});
  REQUIRE(r2.errors.size() == 1);
  CHECK(r2.errors[0].reason.find("cost_c") != std::string::npos);

  auto lost_with_view = bid_line("u", 1, true, false, ",\"viewable_V\":false");
  auto r3 = ingest_lines({window_line("u", 0, 10), lost_with_view});
  REQUIRE(r3.errors.size() == 1);
  CHECK(r3.errors[0].reason.find("viewable_V") != std::string::npos);
}

TEST_CASE("events outside the user window are rejected") {
  auto r = ingest_lines({window_line("u", 0, 100), bid_line("u", 150, true, false)});
  REQUIRE(r.errors.size() == 1);
  CHECK(r.errors[0].line_no == 2);
  CHECK(r.errors[0].reason.find("outside user window") != std::string::npos);
  CHECK(r.timelines.empty());
}

TEST_CASE("missing and duplicate window records are rejected") {
  auto r1 = ingest_lines({bid_line("u", 1, true, false)});
  REQUIRE(r1.errors.size() == 1);
  CHECK(r1.errors[0].reason.find("no window record") != std::string::npos);

  auto r2 = ingest_lines({window_line("u", 0, 10), window_line("u", 0, 20)});
  REQUIRE(r2.errors.size() == 1);
  CHECK(r2.errors[0].line_no == 2);
  CHECK(r2.errors[0].reason.find("duplicate window") != std::string::npos);

  auto r3 = ingest_lines({window_line("u", 10, 10)});
  REQUIRE(r3.errors.size() == 1);
  CHECK(r3.errors[0].reason.find("positive") != std::string::npos);
}

TEST_CASE("malformed JSON and bad values are reported with line numbers") {
  auto r = ingest_lines({window_line("u", 0, 10), "{not json", conv_line("u", 5, -1.0),
                         conv_line("u", 5, 1.0, 1.5),
                         bid_line("u", 1, true, false, ",\"p_win_b\":2.0")});
  REQUIRE(r.errors.size() == 4);
  CHECK(r.errors[0].line_no == 2);
  CHECK(r.errors[0].reason.find("malformed") != std::string::npos);
  CHECK(r.errors[1].reason.find("negative conversion value") != std::string::npos);
  CHECK(r.errors[2].reason.find("margin") != std::string::npos);
  CHECK(r.errors[3].reason.find("probability") != std::string::npos);
}

TEST_CASE("unknown fields warn without rejecting the record") {
  auto r = ingest_lines({window_line("u", 0, 10),
                         bid_line("u", 1, true, false, ",\"mystery\":1,\"extra\":\"x\"")});
  CHECK(r.ok());
  CHECK(r.unknown_field_warnings == 2);
  REQUIRE(r.timelines.size() == 1);
  REQUIRE(r.timelines[0].bids.size() == 1);
}

TEST_CASE("characteristics round-trip through serialization") {
  auto r = ingest_lines({window_line("u", 0, 10),
                         bid_line("u", 1, true, false,
                                  ",\"characteristics\":{\"video\":1.0,\"mobile\":0.25}")});
  REQUIRE(r.ok());
  const auto& b = r.timelines[0].bids[0];
  REQUIRE(b.characteristics.size() == 2);
  CHECK(b.characteristics.at("video") == 1.0);
  CHECK(b.characteristics.at("mobile") == 0.25);
  auto text = serialize_to_string(r.timelines);
  std::istringstream in(text);
  auto rt = ingest(in);
  REQUIRE(rt.ok());
  CHECK(rt.timelines[0].bids[0].characteristics.at("mobile") == 0.25);
}

TEST_CASE("ingest_file reads plain and gzip files identically") {
  std::vector<std::string> lines = {window_line("gz", 0, 50), bid_line("gz", 7, true, true),
                                    conv_line("gz", 30)};
  std::ostringstream joined;
  for (const auto& l : lines) joined << l << '\n';
  std::string text = joined.str();

  std::string plain_path = "/tmp/incr_events_plain.ndjson";
  {
    FILE* f = std::fopen(plain_path.c_str(), "wb");
    REQUIRE(f != nullptr);
    std::fwrite(text.data(), 1, text.size(), f);
    std::fclose(f);
  }
  std::string gz_path = "/tmp/incr_events_gz.ndjson.gz";
  {
    gzFile f = gzopen(gz_path.c_str(), "wb");
    REQUIRE(f != nullptr);
    gzwrite(f, text.data(), static_cast<unsigned>(text.size()));
    gzclose(f);
  }
  auto plain = ingest_file(plain_path);
  auto gz = ingest_file(gz_path);
  REQUIRE(plain.ok());
  REQUIRE(gz.ok());
  CHECK(serialize_to_string(plain.timelines) == serialize_to_string(gz.timelines));
  REQUIRE(gz.timelines.size() == 1);
  CHECK(gz.timelines[0].bids[0].cost_c == 0.8);
  std::remove(plain_path.c_str());
  std::remove(gz_path.c_str());
  CHECK_THROWS_AS(ingest_file("/tmp/incr_no_such_file.ndjson"), DataError);
}
