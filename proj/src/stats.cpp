#include "emrank/stats.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include <boost/math/distributions/normal.hpp>

#include "emrank/error.hpp"

namespace emrank {

using nlohmann::json;

std::size_t RatingTable::rater_count() const {
  if (counts.empty()) return 0;
  std::size_t n = 0;
  for (auto c : counts.front()) n += c;
  return n;
}

std::size_t RatingTable::category_count() const {
  return counts.empty() ? 0 : counts.front().size();
}

void RatingTable::validate() const {
  if (counts.size() < 2)
    throw ValidationError("Fleiss' kappa needs at least two items");
  const std::size_t k = category_count();
  const std::size_t n = rater_count();
  if (k < 2) throw ValidationError("Fleiss' kappa needs at least two categories");
  if (n < 2) throw ValidationError("Fleiss' kappa needs at least two raters");
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (counts[i].size() != k)
      throw ValidationError("rating row " + std::to_string(i) +
                            " has a different number of categories");
    std::size_t sum = 0;
    for (auto c : counts[i]) sum += c;
    if (sum != n)
      throw ValidationError("rating row " + std::to_string(i) + " sums to " +
                            std::to_string(sum) + ", expected " +
                            std::to_string(n));
  }
}

KappaResult fleiss_kappa(const RatingTable& table) {
  table.validate();
  const std::size_t items = table.counts.size();
  const std::size_t k = table.category_count();
  const double n = static_cast<double>(table.rater_count());

  double p_bar = 0.0;
  std::vector<double> category_totals(k, 0.0);
  for (const auto& row : table.counts) {
    double agreeing_pairs = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double c = static_cast<double>(row[j]);
      agreeing_pairs += c * (c - 1.0);
      category_totals[j] += c;
    }
    p_bar += agreeing_pairs / (n * (n - 1.0));
  }
  p_bar /= static_cast<double>(items);

  double p_e = 0.0;
  const double total = n * static_cast<double>(items);
  for (double t : category_totals) {
    const double share = t / total;
    p_e += share * share;
  }

  KappaResult out;
  out.observed_agreement = p_bar;
  out.chance_agreement = p_e;
  out.items = items;
  out.raters = table.rater_count();
  if (p_e < 1.0) out.kappa = (p_bar - p_e) / (1.0 - p_e);
  return out;
}

double normal_critical_value(double confidence) {
  if (!(confidence > 0.0 && confidence < 1.0))
    throw ValidationError("confidence must lie in (0, 1)");
  const boost::math::normal_distribution<double> standard;
  return boost::math::quantile(standard, 1.0 - (1.0 - confidence) / 2.0);
}

CorrelationResult pearson(std::span<const double> x, std::span<const double> y,
                          double confidence) {
  if (x.size() != y.size())
    throw ValidationError("pearson inputs differ in length");
  if (x.size() < 2) throw ValidationError("pearson needs at least two pairs");
  CorrelationResult out;
  out.n = x.size();
  out.confidence = confidence;

  auto constant = [](std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [&](double e) { return e == v[0]; });
  };
  if (constant(x) || constant(y)) return out;

  const double nd = static_cast<double>(x.size());
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= nd;
  my /= nd;
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  const double r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  out.r = r;

  if (out.n > 3) {
    if (std::abs(r) == 1.0) {
      out.ci_low = r;
      out.ci_high = r;
    } else {
      const double z = std::atanh(r);
      const double half =
          normal_critical_value(confidence) / std::sqrt(nd - 3.0);
      out.ci_low = std::tanh(z - half);
      out.ci_high = std::tanh(z + half);
    }
  }
  return out;
}

std::map<std::string, ProvenanceVerdict> consensus(
    std::span<const AnnotationRecord> annotations,
    const std::map<std::string, BlindedPair>& pairs) {
  std::map<std::string, std::pair<std::size_t, std::size_t>> tallies;
  for (const auto& a : annotations) {
    a.validate();
    const auto it = pairs.find(a.item_id);
    if (it == pairs.end())
      throw ValidationError("annotation by '" + a.annotator_id +
                            "' references unknown item '" + a.item_id + "'");
    auto& [chatbot, physician] = tallies[a.item_id];
    if (unblind(it->second, a.slot_choice) ==
        ProvenanceVerdict::ChatbotMoreEmpathetic)
      ++chatbot;
    else
      ++physician;
  }
  std::map<std::string, ProvenanceVerdict> out;
  for (const auto& [id, t] : tallies) {
    out[id] = t.first > t.second    ? ProvenanceVerdict::ChatbotMoreEmpathetic
              : t.second > t.first ? ProvenanceVerdict::PhysicianMoreEmpathetic
                                   : ProvenanceVerdict::Undecided;
  }
  return out;
}

RatingTable rating_table(std::span<const AnnotationRecord> annotations,
                         const std::map<std::string, BlindedPair>& pairs) {
  std::map<std::string, std::vector<std::size_t>> rows;
  for (const auto& a : annotations) {
    const auto it = pairs.find(a.item_id);
    if (it == pairs.end())
      throw ValidationError("annotation references unknown item '" +
                            a.item_id + "'");
    auto& row = rows[a.item_id];
    row.resize(2, 0);
    const bool chatbot = unblind(it->second, a.slot_choice) ==
                         ProvenanceVerdict::ChatbotMoreEmpathetic;
    ++row[chatbot ? 0 : 1];
  }
  std::map<std::size_t, std::size_t> by_size;
  for (const auto& [id, row] : rows) ++by_size[row[0] + row[1]];
  std::size_t modal = 0;
  std::size_t best = 0;
  for (const auto& [size, freq] : by_size) {
    if (freq > best || (freq == best && size > modal)) {
      modal = size;
      best = freq;
    }
  }
  RatingTable table;
  for (const auto& [id, row] : rows)
    if (row[0] + row[1] == modal) table.counts.push_back(row);
  return table;
}

CorrelationResult metric_human_agreement(
    const RunResult& run, const std::map<std::string, ProvenanceVerdict>& human) {
  std::vector<double> metric_side;
  std::vector<double> human_side;
  auto encode = [](ProvenanceVerdict v) {
    return v == ProvenanceVerdict::ChatbotMoreEmpathetic ? 1.0 : 0.0;
  };
  for (const auto& [id, item] : run.per_item) {
    const auto h = human.find(id);
    if (h == human.end()) continue;
    if (item.provenance_verdict == ProvenanceVerdict::Undecided ||
        h->second == ProvenanceVerdict::Undecided)
      continue;
    metric_side.push_back(encode(item.provenance_verdict));
    human_side.push_back(encode(h->second));
  }
  if (metric_side.size() < 2) {
    CorrelationResult out;
    out.n = metric_side.size();
    return out;
  }
  return pearson(metric_side, human_side);
}

WinRateReport win_rate_report(
    std::span<const RunResult> runs,
    const std::map<std::string, ProvenanceVerdict>& human) {
  WinRateReport report;
  for (const auto& run : runs)
    report.columns.push_back({std::string(to_string(run.metric)), run.summary});
  if (!human.empty()) {
    WinSummary s;
    for (const auto& [id, v] : human) s.add(v);
    s.finalize();
    report.columns.push_back({"human", s});
  }
  return report;
}

namespace {

double undecided_share(const WinSummary& s) {
  const auto total = s.total();
  return total == 0 ? 0.0
                    : static_cast<double>(s.undecided) / static_cast<double>(total);
}

std::string percent(std::optional<double> share) {
  if (!share) return "n/a";
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << *share * 100.0 << '%';
  return os.str();
}

}  // namespace

json WinRateReport::to_json() const {
  json cols = json::array();
  for (const auto& c : columns) {
    auto rate = [](std::optional<double> v) -> json {
      if (v) return *v * 100.0;
      return nullptr;
    };
    cols.push_back({{"label", c.label},
                    {"chatbot_wins", c.summary.chatbot_wins},
                    {"physician_wins", c.summary.physician_wins},
                    {"undecided", c.summary.undecided},
                    {"failed", c.summary.failed},
                    {"chatbot_percent", rate(c.summary.chatbot_rate)},
                    {"physician_percent", rate(c.summary.physician_rate)},
                    {"undecided_percent", undecided_share(c.summary) * 100.0}});
  }
  return {{"columns", cols}};
}

std::string WinRateReport::to_text() const {
  constexpr int kLabel = 12;
  constexpr int kCell = 12;
  std::ostringstream os;
  os << std::left << std::setw(kLabel) << "";
  for (const auto& c : columns) os << std::right << std::setw(kCell) << c.label;
  os << '\n';
  auto row = [&](std::string_view name, auto cell) {
    os << std::left << std::setw(kLabel) << name;
    for (const auto& c : columns)
      os << std::right << std::setw(kCell) << cell(c.summary);
    os << '\n';
  };
  row("ChatGPT", [](const WinSummary& s) { return percent(s.chatbot_rate); });
  row("Physician", [](const WinSummary& s) { return percent(s.physician_rate); });
  row("Undecided", [](const WinSummary& s) {
    return percent(s.total() ? std::optional(undecided_share(s)) : std::nullopt);
  });
  return os.str();
}

}  // namespace emrank
