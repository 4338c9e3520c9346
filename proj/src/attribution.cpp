#include "incr/attribution.hpp"

#include <cmath>
#include <set>
#include <string>

#include <json.hpp>

#include "incr/errors.hpp"
#include "incr/features.hpp"
#include "incr/util.hpp"

namespace incr {
namespace {

using json = nlohmann::ordered_json;

bool structural(const FeatureKey& k) {
  return k.stock_class == StockClass::AdStock ||
         k.stock_class == StockClass::RetargetConjunction;
}

// beta-weighted sum over the ad-effect keys only.
double effect_sum(const CoefficientSet& coef, const std::vector<double>& cols) {
  double s = 0.0;
  for (std::size_t i = 0; i < coef.keys.size(); ++i)
    if (structural(coef.keys.keys[i])) s += coef.beta[static_cast<Eigen::Index>(i)] * cols[i];
  return s;
}

double baseline_intensity(const EventTimeline& tl, double t, const CoefficientSet& coef) {
  FeatureFrame frame = evaluate_stock(tl, t, coef.keys);
  double alpha = 0.0;
  for (std::size_t i = 0; i < coef.keys.size(); ++i)
    if (coef.keys.keys[i].stock_class == StockClass::Baseline)
      alpha += coef.beta[static_cast<Eigen::Index>(i)] * frame.columns[i];
  return alpha;
}

void check_model(const CoefficientSet& coef) {
  if (coef.beta.size() != static_cast<Eigen::Index>(coef.keys.size()))
    throw ConfigError("coefficient vector does not match the feature key set");
}

bool slice_matches(const SliceSpec& s, const BidEvent& b) {
  for (const auto& [name, want] : s.equals) {
    auto it = b.characteristics.find(name);
    double have = it == b.characteristics.end() ? 0.0 : it->second;
    if (have != want) return false;
  }
  return true;
}

}  // namespace

ConversionShares conversion_shares(const EventTimeline& timeline,
                                   const CoefficientSet& coefficients,
                                   const ConversionEvent& conversion) {
  check_model(coefficients);
  ConversionShares out;
  out.user_id = timeline.user_id;
  out.t_c = conversion.t_c;
  out.alpha_tc = baseline_intensity(timeline, conversion.t_c, coefficients);
  for (std::size_t j = 0; j < timeline.bids.size(); ++j) {
    const BidEvent& b = timeline.bids[j];
    if (b.t_j >= conversion.t_c) break;  // bids are sorted; strictly earlier only
    if (!b.won_A) continue;
    std::vector<double> cols = impression_stock_at(timeline, b, conversion.t_c, coefficients.keys);
    ShareItem item;
    item.bid_index = j;
    item.delta_y_ij_tc = effect_sum(coefficients, cols);
    out.items.push_back(item);
    out.delta_y_tc += item.delta_y_ij_tc;
  }
  out.predicted = out.alpha_tc + out.delta_y_tc;
  if (!(out.predicted > 0.0))
    throw DomainError("degenerate prediction at conversion time " + fmt_double(conversion.t_c) +
                      ": organic " + fmt_double(out.alpha_tc) + " + ad effect " +
                      fmt_double(out.delta_y_tc) + " must be positive");
  // Every share uses the one denominator, so the conversion-level share is
  // the exact sum of the pairwise ones.
  for (auto& item : out.items) {
    item.s_ijc = item.delta_y_ij_tc / out.predicted;
    out.s_ic += item.s_ijc;
    if (item.s_ijc < 0.0) out.negative_effect = true;
  }
  return out;
}

AttributionRecord impression_accounting(const EventTimeline& timeline,
                                        const CoefficientSet& coefficients,
                                        std::size_t impression_index, double as_of) {
  check_model(coefficients);
  if (impression_index >= timeline.bids.size())
    throw ConfigError("impression index out of range for user " + timeline.user_id);
  const BidEvent& bid = timeline.bids[impression_index];
  if (!bid.won_A) throw DomainError("accounting needs a won impression");
  if (as_of < bid.t_j) throw DomainError("reporting time precedes the impression");

  AttributionRecord rec;
  rec.user_id = timeline.user_id;
  rec.impression_ref = impression_index;
  rec.as_of_t = as_of;

  ImpressionValueSplit split = impression_value_split(timeline, bid, as_of, coefficients.keys);
  rec.delta_y_ij = effect_sum(coefficients, split.total);
  rec.r_ij_t = effect_sum(coefficients, split.residual);

  for (const auto& c : timeline.conversions) {
    if (c.t_c > as_of) break;
    if (c.t_c <= bid.t_j) continue;
    ConversionShares shares = conversion_shares(timeline, coefficients, c);
    for (const auto& item : shares.items)
      if (item.bid_index == impression_index) rec.s_ij_partial_t += item.s_ijc;
  }

  if (rec.delta_y_ij != 0.0) {
    double rc = bid.cost_c * rec.r_ij_t / rec.delta_y_ij;
    rec.residual_cost = rc;
    rec.accumulated_cost = bid.cost_c - rc;
    // Scale the partial share up by the fraction of the effect already
    // dissipated; right at t_j nothing has, and the scale is undefined.
    double opened = rec.delta_y_ij - rec.r_ij_t;
    if (opened != 0.0) rec.expected_share = rec.s_ij_partial_t * rec.delta_y_ij / opened;
  } else if (bid.cost_c == 0.0) {
    rec.residual_cost = 0.0;
    rec.accumulated_cost = 0.0;
  } else {
    rec.zero_denominator = true;
  }
  rec.negative_effect = rec.delta_y_ij < 0.0 || rec.s_ij_partial_t < 0.0;
  return rec;
}

void SliceSpec::validate() const {
  auto ok_name = [](const std::string& s) {
    if (s.empty()) return false;
    for (char ch : s) {
      bool ok = (ch >= 'a' && ch <= 'z') || (ch >= 'A' && ch <= 'Z') ||
                (ch >= '0' && ch <= '9') || ch == '_' || ch == '.' || ch == '-';
      if (!ok) return false;
    }
    return true;
  };
  if (!ok_name(name)) throw ConfigError("slice name must match [A-Za-z0-9_.-]+: '" + name + "'");
  for (const auto& [key, value] : equals) {
    if (!ok_name(key))
      throw ConfigError("slice filter characteristic must match [A-Za-z0-9_.-]+: '" + key + "'");
    if (!std::isfinite(value)) throw ConfigError("slice filter value must be finite");
  }
}

std::vector<RollupRow> campaign_rollup(const std::vector<EventTimeline>& timelines,
                                       const CoefficientSet& coefficients, double as_of,
                                       const std::vector<SliceSpec>& slices) {
  check_model(coefficients);
  std::set<std::string> names;
  for (const auto& s : slices) {
    s.validate();
    if (!names.insert(s.name).second) throw ConfigError("duplicate slice name: " + s.name);
  }

  struct Acc {
    RollupRow row;
    std::set<std::string> users;
    double alpha_sum = 0.0;
  };
  std::vector<Acc> accs(slices.size());
  for (std::size_t k = 0; k < slices.size(); ++k) accs[k].row.slice = slices[k].name;

  std::vector<std::size_t> match;
  for (const auto& tl : timelines) {
    // Conversion-major pass: pairwise shares, also kept per impression so the
    // impression-major pass below re-sums the same terms in its own order.
    std::vector<double> partial(tl.bids.size(), 0.0);
    for (const auto& c : tl.conversions) {
      if (c.t_c > as_of) break;
      ConversionShares shares = conversion_shares(tl, coefficients, c);
      for (const auto& item : shares.items) {
        partial[item.bid_index] += item.s_ijc;
        for (std::size_t k = 0; k < slices.size(); ++k)
          if (slice_matches(slices[k], tl.bids[item.bid_index]))
            accs[k].row.incr_conversion_side += item.s_ijc;
      }
    }
    for (std::size_t j = 0; j < tl.bids.size(); ++j) {
      const BidEvent& bid = tl.bids[j];
      if (!bid.won_A || bid.t_j > as_of) continue;
      match.clear();
      for (std::size_t k = 0; k < slices.size(); ++k)
        if (slice_matches(slices[k], bid)) match.push_back(k);
      if (match.empty()) continue;
      ImpressionValueSplit split = impression_value_split(tl, bid, as_of, coefficients.keys);
      double dy = effect_sum(coefficients, split.total);
      double res = effect_sum(coefficients, split.residual);
      double alpha_tj = baseline_intensity(tl, bid.t_j, coefficients);
      for (std::size_t k : match) {
        Acc& a = accs[k];
        a.users.insert(tl.user_id);
        a.row.n_impressions += 1;
        a.row.cost += bid.cost_c;
        a.row.incr_partial += partial[j];
        a.row.incr_residual += res;
        a.row.incr_model_side += dy;
        a.alpha_sum += alpha_tj;
        if (dy != 0.0) {
          double rc = bid.cost_c * res / dy;
          a.row.residual_cost += rc;
          a.row.accumulated_cost += bid.cost_c - rc;
        } else if (bid.cost_c != 0.0) {
          a.row.n_zero_denominator += 1;
        }
      }
    }
  }

  std::vector<RollupRow> rows;
  rows.reserve(accs.size());
  for (auto& a : accs) {
    RollupRow& row = a.row;
    row.n_users = a.users.size();
    row.incr_impression_side = row.incr_partial + row.incr_residual;
    if (row.incr_impression_side != 0.0)
      row.expected_cpia_s = row.cost / row.incr_impression_side;
    if (row.incr_partial != 0.0)
      row.expected_cpia_partial = row.accumulated_cost / row.incr_partial;
    if (a.alpha_sum > 0.0 && row.n_impressions > 0)
      row.lift_simple = row.incr_model_side / a.alpha_sum;
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string rollup_to_csv(const std::vector<RollupRow>& rows) {
  auto opt = [](const std::optional<double>& v) { return v ? fmt_double(*v) : std::string(); };
  std::string out =
      "slice,n_users,n_impressions,cost,accumulated_cost,residual_cost,"
      "incr_conversion_side,incr_impression_side,incr_model_side,"
      "expected_cpia_s,expected_cpia_partial\n";
  for (const auto& r : rows) {
    out += r.slice + ',' + std::to_string(r.n_users) + ',' + std::to_string(r.n_impressions) +
           ',' + fmt_double(r.cost) + ',' + fmt_double(r.accumulated_cost) + ',' +
           fmt_double(r.residual_cost) + ',' + fmt_double(r.incr_conversion_side) + ',' +
           fmt_double(r.incr_impression_side) + ',' + fmt_double(r.incr_model_side) + ',' +
           opt(r.expected_cpia_s) + ',' + opt(r.expected_cpia_partial) + '\n';
  }
  return out;
}

std::string rollup_to_json(const std::vector<RollupRow>& rows) {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(); };
  json arr = json::array();
  for (const auto& r : rows) {
    json j;
    j["slice"] = r.slice;
    j["n_users"] = r.n_users;
    j["n_impressions"] = r.n_impressions;
    j["cost"] = r.cost;
    j["accumulated_cost"] = r.accumulated_cost;
    j["residual_cost"] = r.residual_cost;
    j["incr_conversion_side"] = r.incr_conversion_side;
    j["incr_impression_side"] = r.incr_impression_side;
    j["incr_model_side"] = r.incr_model_side;
    j["expected_cpia_s"] = opt(r.expected_cpia_s);
    j["expected_cpia_partial"] = opt(r.expected_cpia_partial);
    j["incr_partial"] = r.incr_partial;
    j["incr_residual"] = r.incr_residual;
    j["lift_simple"] = opt(r.lift_simple);
    j["n_zero_denominator"] = r.n_zero_denominator;
    arr.push_back(std::move(j));
  }
  return arr.dump(1);
}

}  // namespace incr
