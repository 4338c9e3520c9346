#include "incr/features.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "incr/errors.hpp"
#include "incr/util.hpp"

namespace incr {
namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

// Decay horizon beyond which a single event's contribution is below ~1e-16
// of unit mass; scanning stops there.
double horizon(const KernelSpec& k) {
  if (k.truncated()) return k.truncation;
  if (k.family == KernelFamily::Exponential) return 40.0 * k.tau;
  return (40.0 + 12.0 * k.shape_k) * k.tau;
}

// "unit" and the reserved "auctions" name weigh every bid at 1; on a Baseline
// key "auctions" yields the running auction count rather than the intercept.
double characteristic_weight(const BidEvent& b, const std::string& name) {
  if (name == "unit" || name == "auctions") return 1.0;
  auto it = b.characteristics.find(name);
  return it == b.characteristics.end() ? 0.0 : it->second;
}

double trig_at(const FourierSpec& f, double t) {
  if (f.plain()) return 1.0;
  double w = kTwoPi * f.order_n / f.period_S;
  return f.phase_a ? std::sin(w * t) : std::cos(w * t);
}

// Gate and probability weight for a stock class; returns false when the bid
// does not qualify.
bool class_gate(StockClass c, const BidEvent& b, double& prob) {
  switch (c) {
    case StockClass::AdStock:
      prob = 1.0;
      return b.won_A;
    case StockClass::PotentialAdStock:
      prob = b.p_win_b;
      return b.submitted_B;
    case StockClass::GhostBidStock:
      prob = b.p_win_g;
      return true;  // G_j is 1 for every logged intent
    default:
      prob = 1.0;
      return true;
  }
}

// Viewability factor: realized V_j for won impressions on AdStock-gated
// columns, expected p_viewable elsewhere (the ex-ante instrument transform).
double view_factor(const FeatureKey& key, StockClass gate_class, const BidEvent& b) {
  if (!key.viewable) return 1.0;
  if (gate_class == StockClass::AdStock) return b.viewable_V.value_or(false) ? 1.0 : 0.0;
  return b.p_viewable;
}

bool valid_characteristic(const std::string& s) {
  if (s.empty()) return false;
  for (char ch : s) {
    bool ok = (ch >= 'a' && ch <= 'z') || (ch >= 'A' && ch <= 'Z') || (ch >= '0' && ch <= '9') ||
              ch == '_' || ch == '.' || ch == '-';
    if (!ok) return false;
  }
  return true;
}

// The gate class whose bids a key scans: RetargetConjunction pairs are won
// impressions unless the key is itself instrument-side.
StockClass gate_class_of(const FeatureKey& key) {
  if (key.stock_class != StockClass::RetargetConjunction) return key.stock_class;
  return StockClass::AdStock;
}

double eval_key(const FeatureKey& key, const EventTimeline& tl, double t) {
  double trig = trig_at(key.fourier, t);
  if (trig == 0.0) return 0.0;

  if (key.stock_class == StockClass::Baseline) {
    double base = 1.0;
    if (key.characteristic != "unit") {
      base = 0.0;
      for (const auto& b : tl.bids) {
        if (b.t_j > t) break;
        base += characteristic_weight(b, key.characteristic);
      }
    }
    return base * trig;
  }

  bool conjunction = key.retarget_tau.has_value();
  KernelSpec event_kernel;
  if (conjunction) {
    event_kernel.family = KernelFamily::Exponential;
    event_kernel.tau = *key.retarget_tau;
  }
  StockClass gate = gate_class_of(key);
  double hor = horizon(key.kernel);

  // Bids are time sorted; walk backward from the last one at or before t.
  auto first_after = std::upper_bound(
      tl.bids.begin(), tl.bids.end(), t,
      [](double lhs, const BidEvent& b) { return lhs < b.t_j; });
  double sum = 0.0;
  for (auto it = first_after; it != tl.bids.begin();) {
    --it;
    const BidEvent& b = *it;
    double dt = t - b.t_j;
    if (dt > hor) break;
    double prob = 1.0;
    if (!class_gate(gate, b, prob)) continue;
    double w = characteristic_weight(b, key.characteristic);
    if (w == 0.0) continue;
    double scale = prob * w * view_factor(key, gate, b);
    if (scale == 0.0) continue;
    if (!conjunction) {
      sum += scale * density_and_cdf(key.kernel, dt).density;
    } else {
      // Pairs gated on t > t_j > t_r (strict); each contributes the product
      // of the ad-stock and event-stock densities.
      if (dt == 0.0) continue;
      for (const auto& r : tl.retargets) {
        if (r.t_r >= b.t_j) break;
        if (t - r.t_r > 40.0 * event_kernel.tau + hor) continue;
        sum += scale * density_and_cdf(key.kernel, dt).density *
               density_and_cdf(event_kernel, t - r.t_r).density;
      }
    }
  }
  return sum * trig;
}

}  // namespace

const char* to_string(StockClass c) {
  switch (c) {
    case StockClass::AdStock: return "AdStock";
    case StockClass::PotentialAdStock: return "PotentialAdStock";
    case StockClass::GhostBidStock: return "GhostBidStock";
    case StockClass::Baseline: return "Baseline";
    case StockClass::RetargetConjunction: return "RetargetConjunction";
  }
  return "?";
}

std::optional<StockClass> stock_class_from_string(const std::string& s) {
  for (StockClass c : {StockClass::AdStock, StockClass::PotentialAdStock,
                       StockClass::GhostBidStock, StockClass::Baseline,
                       StockClass::RetargetConjunction}) {
    if (s == to_string(c)) return c;
  }
  return std::nullopt;
}

void FeatureKey::validate() const {
  if (!valid_characteristic(characteristic))
    throw ConfigError("feature characteristic must be 'unit' or [A-Za-z0-9_.-]+: '" +
                      characteristic + "'");
  fourier.validate();
  if (stock_class == StockClass::Baseline) {
    if (retarget_tau) throw ConfigError("Baseline keys cannot carry a retarget kernel");
    if (viewable) throw ConfigError("Baseline keys cannot be viewability-weighted");
    return;
  }
  validate_kernel_fourier(kernel, fourier);
  if (stock_class == StockClass::RetargetConjunction && !retarget_tau)
    throw ConfigError("RetargetConjunction keys need retarget_tau");
  if (stock_class == StockClass::AdStock && retarget_tau)
    throw ConfigError("use RetargetConjunction for won-impression retarget pairs");
  if (retarget_tau) {
    if (!(*retarget_tau > 0) || !std::isfinite(*retarget_tau))
      throw ConfigError("retarget_tau must be positive and finite");
    if (kernel.family != KernelFamily::Exponential || kernel.truncated())
      throw ConfigError("retarget conjunctions support untruncated exponential kernels only");
  }
}

std::string FeatureKey::canonical() const {
  std::string s = to_string(stock_class);
  s += '|';
  s += characteristic;
  s += '|';
  if (stock_class == StockClass::Baseline) {
    s += '-';
  } else if (kernel.family == KernelFamily::Exponential) {
    s += "exp:t=" + fmt_double(kernel.tau);
    if (kernel.truncated()) s += ":T=" + fmt_double(kernel.truncation);
  } else {
    s += "gam:t=" + fmt_double(kernel.tau) + ":k=" + fmt_double(kernel.shape_k);
  }
  s += '|';
  if (fourier.plain()) {
    s += "n0";
  } else {
    s += "S=" + fmt_double(fourier.period_S) + ":n=" + std::to_string(fourier.order_n) +
         ":a=" + std::to_string(fourier.phase_a);
  }
  s += '|';
  s += retarget_tau ? "rt=" + fmt_double(*retarget_tau) : "-";
  s += '|';
  s += viewable ? "V" : "-";
  return s;
}

void FeatureSet::validate() const {
  std::set<std::string> seen;
  for (const auto& k : keys) {
    k.validate();
    if (!seen.insert(k.canonical()).second)
      throw ConfigError("duplicate feature key: " + k.canonical());
  }
}

std::vector<std::size_t> FeatureSet::indices_of(StockClass c) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < keys.size(); ++i)
    if (keys[i].stock_class == c) out.push_back(i);
  return out;
}

std::optional<std::size_t> FeatureSet::intercept_index() const {
  for (std::size_t i = 0; i < keys.size(); ++i) {
    const auto& k = keys[i];
    if (k.stock_class == StockClass::Baseline && k.characteristic == "unit" &&
        k.fourier.plain())
      return i;
  }
  return std::nullopt;
}

std::string feature_config_hash(const FeatureSet& keys) {
  std::string joined;
  for (const auto& k : keys.keys) {
    joined += k.canonical();
    joined += '\n';
  }
  return hex64(fnv1a64(joined));
}

FeatureFrame evaluate_stock(const EventTimeline& timeline, double t, const FeatureSet& keys) {
  if (t < timeline.t_start || t > timeline.t_end)
    throw DomainError("evaluation time outside user window");
  FeatureFrame frame;
  frame.user_id = timeline.user_id;
  frame.t = t;
  frame.columns.resize(keys.size());
  for (std::size_t i = 0; i < keys.size(); ++i) frame.columns[i] = eval_key(keys.keys[i], timeline, t);
  return frame;
}

double incremental_value(const EventTimeline& timeline, const BidEvent& bid,
                         const FeatureSet& keys, const std::vector<double>& beta) {
  if (beta.size() != keys.size())
    throw ConfigError("coefficient vector does not match the feature key set");
  double total = 0.0;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    const FeatureKey& key = keys.keys[i];
    if (key.stock_class != StockClass::AdStock &&
        key.stock_class != StockClass::RetargetConjunction)
      continue;
    if (beta[i] == 0.0) continue;
    double w = characteristic_weight(bid, key.characteristic);
    if (w == 0.0) continue;
    double scale = w * (key.viewable ? bid.p_viewable : 1.0);
    if (key.stock_class == StockClass::AdStock) {
      total += beta[i] * scale * fourier_delta(key.kernel, key.fourier, bid.t_j);
    } else {
      KernelSpec ev;
      ev.family = KernelFamily::Exponential;
      ev.tau = *key.retarget_tau;
      double pairs = 0.0;
      for (const auto& r : timeline.retargets) {
        if (r.t_r >= bid.t_j) break;  // ex ante: strictly earlier events only
        pairs += retarget_fourier_delta(key.kernel, ev, key.fourier, bid.t_j, r.t_r);
      }
      total += beta[i] * scale * pairs;
    }
  }
  return total;
}

std::vector<double> impression_stock_at(const EventTimeline& timeline, const BidEvent& bid,
                                        double t, const FeatureSet& keys) {
  std::vector<double> out(keys.size(), 0.0);
  double dt = t - bid.t_j;
  if (dt < 0.0 || !bid.won_A) return out;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    const FeatureKey& key = keys.keys[i];
    if (key.stock_class != StockClass::AdStock &&
        key.stock_class != StockClass::RetargetConjunction)
      continue;
    if (dt > horizon(key.kernel)) continue;
    double trig = trig_at(key.fourier, t);
    if (trig == 0.0) continue;
    double w = characteristic_weight(bid, key.characteristic);
    if (w == 0.0) continue;
    double scale = w * view_factor(key, StockClass::AdStock, bid);
    if (scale == 0.0) continue;
    if (key.stock_class == StockClass::AdStock) {
      out[i] = scale * density_and_cdf(key.kernel, dt).density * trig;
    } else {
      if (dt == 0.0) continue;
      KernelSpec ev;
      ev.family = KernelFamily::Exponential;
      ev.tau = *key.retarget_tau;
      double hor = horizon(key.kernel);
      double pairs = 0.0;
      for (const auto& r : timeline.retargets) {
        if (r.t_r >= bid.t_j) break;
        if (t - r.t_r > 40.0 * ev.tau + hor) continue;
        pairs += density_and_cdf(key.kernel, dt).density *
                 density_and_cdf(ev, t - r.t_r).density;
      }
      out[i] = scale * pairs * trig;
    }
  }
  return out;
}

ImpressionValueSplit impression_value_split(const EventTimeline& timeline, const BidEvent& bid,
                                            double t, const FeatureSet& keys) {
  ImpressionValueSplit out;
  out.total.assign(keys.size(), 0.0);
  out.residual.assign(keys.size(), 0.0);
  if (!bid.won_A) return out;
  double u = std::max(t, bid.t_j);
  for (std::size_t i = 0; i < keys.size(); ++i) {
    const FeatureKey& key = keys.keys[i];
    if (key.stock_class != StockClass::AdStock &&
        key.stock_class != StockClass::RetargetConjunction)
      continue;
    double w = characteristic_weight(bid, key.characteristic);
    if (w == 0.0) continue;
    double scale = w * view_factor(key, StockClass::AdStock, bid);
    if (scale == 0.0) continue;
    if (key.stock_class == StockClass::AdStock) {
      out.total[i] = scale * fourier_delta(key.kernel, key.fourier, bid.t_j);
      // At u == t_j nothing has dissipated yet; reuse the total so the split
      // is exact rather than one closed form evaluated against another.
      out.residual[i] = u == bid.t_j
                            ? out.total[i]
                            : scale * fourier_residual(key.kernel, key.fourier, bid.t_j, u);
    } else {
      KernelSpec ev;
      ev.family = KernelFamily::Exponential;
      ev.tau = *key.retarget_tau;
      double tot = 0.0;
      double res = 0.0;
      for (const auto& r : timeline.retargets) {
        if (r.t_r >= bid.t_j) break;
        tot += retarget_fourier_delta(key.kernel, ev, key.fourier, bid.t_j, r.t_r);
        if (u != bid.t_j)
          res += retarget_fourier_residual(key.kernel, ev, key.fourier, bid.t_j, r.t_r, u);
      }
      out.total[i] = scale * tot;
      out.residual[i] = u == bid.t_j ? out.total[i] : scale * res;
    }
  }
  return out;
}

}  // namespace incr
