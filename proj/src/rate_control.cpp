#include "stts/rate_control.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <map>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace stts {

namespace {

double parse_double(std::string_view s, const char* what) {
  std::string tmp(s);
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(tmp, &used);
  } catch (const std::exception&) {
    throw std::invalid_argument(std::string("cannot parse ") + what + ": '" + tmp + "'");
  }
  while (used < tmp.size() && std::isspace(static_cast<unsigned char>(tmp[used]))) ++used;
  if (used != tmp.size()) throw std::invalid_argument(std::string("cannot parse ") + what + ": '" + tmp + "'");
  return v;
}

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

DurationDistribution normalized(std::vector<double> v) {
  double s = 0.0;
  for (double x : v) {
    if (!(x >= 0.0) || !std::isfinite(x)) throw std::invalid_argument("histogram has a negative or non-finite bin");
    s += x;
  }
  if (!(s > 0.0)) throw std::invalid_argument("histogram is all zeros");
  for (double& x : v) x /= s;
  return DurationDistribution{std::move(v)};
}

}  // namespace

DurationDistribution smooth(const DurationDistribution& dist, double epsilon) {
  const double denom = 1.0 + static_cast<double>(dist.size()) * epsilon;
  std::vector<double> out(dist.size());
  for (std::size_t i = 0; i < dist.size(); ++i) out[i] = (dist[i] + epsilon) / denom;
  return DurationDistribution{std::move(out)};
}

RateTargetTable::RateTargetTable(std::vector<RateAnchor> anchors, double smoothing_epsilon)
    : anchors_(std::move(anchors)), epsilon_(smoothing_epsilon) {
  if (anchors_.empty()) throw std::invalid_argument("rate table: no anchors");
  if (!(epsilon_ > 0.0)) throw std::invalid_argument("rate table: smoothing epsilon must be > 0");
  for (std::size_t i = 0; i < anchors_.size(); ++i) {
    auto& a = anchors_[i];
    if (a.histogram.size() != kDurationBins) throw std::invalid_argument("rate table: histogram must have 6 bins");
    a.histogram = normalized(a.histogram.p);
    if (!std::isfinite(a.sps)) throw std::invalid_argument("rate table: non-finite anchor sps");
    if (i > 0 && !(a.sps > anchors_[i - 1].sps)) {
      throw std::invalid_argument("rate table: anchors must be strictly increasing in sps");
    }
  }
  if (anchors_.front().sps > 1.0 || anchors_.back().sps < 7.0) {
    throw std::invalid_argument("rate table: anchors must cover at least [1, 7] sps");
  }
}

TargetLookup RateTargetTable::target_distribution(double sps) const {
  if (!std::isfinite(sps)) throw std::invalid_argument("rate table: non-finite sps query");
  TargetLookup out;
  out.sps = sps;
  if (sps <= anchors_.front().sps) {
    out.clamped = sps < anchors_.front().sps;
    out.sps = anchors_.front().sps;
    out.dist = smooth(anchors_.front().histogram, epsilon_);
    return out;
  }
  if (sps >= anchors_.back().sps) {
    out.clamped = sps > anchors_.back().sps;
    out.sps = anchors_.back().sps;
    out.dist = smooth(anchors_.back().histogram, epsilon_);
    return out;
  }
  const auto hi = std::upper_bound(anchors_.begin(), anchors_.end(), sps,
                                   [](double v, const RateAnchor& a) { return v < a.sps; });
  const auto lo = hi - 1;
  if (lo->sps == sps) {
    out.dist = smooth(lo->histogram, epsilon_);
    return out;
  }
  const double w = (sps - lo->sps) / (hi->sps - lo->sps);
  std::vector<double> mix(kDurationBins);
  for (std::size_t i = 0; i < kDurationBins; ++i) mix[i] = (1.0 - w) * lo->histogram[i] + w * hi->histogram[i];
  out.dist = smooth(DurationDistribution{std::move(mix)}, epsilon_);
  return out;
}

std::string RateTargetTable::to_json() const {
  nlohmann::json doc;
  doc["smoothing_epsilon"] = epsilon_;
  doc["anchors"] = nlohmann::json::array();
  for (const auto& a : anchors_) doc["anchors"].push_back({{"sps", a.sps}, {"histogram", a.histogram.p}});
  return doc.dump(2);
}

RateTargetTable RateTargetTable::from_json(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("rate table: ") + e.what());
  }
  std::vector<RateAnchor> anchors;
  try {
    for (const auto& a : doc.at("anchors")) {
      anchors.push_back(RateAnchor{a.at("sps").get<double>(), DurationDistribution{a.at("histogram").get<std::vector<double>>()}});
    }
    return RateTargetTable(std::move(anchors), doc.value("smoothing_epsilon", kDefaultSmoothing));
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("rate table: ") + e.what());
  }
}

double expected_shift(const DurationDistribution& dist) {
  double m = 0.0;
  for (std::size_t id = 0; id < dist.size(); ++id) m += static_cast<double>(id / 2) * dist[id];
  return m;
}

RateTargetTable default_rate_table(const SyntheticTableParams& params) {
  if (!(params.step > 0.0) || !(params.min_sps > 0.0) || params.max_sps <= params.min_sps) {
    throw std::invalid_argument("synthetic table: bad sps grid");
  }
  std::vector<RateAnchor> anchors;
  const auto n = static_cast<std::size_t>(std::llround((params.max_sps - params.min_sps) / params.step));
  for (std::size_t k = 0; k <= n; ++k) {
    const double sps = params.min_sps + static_cast<double>(k) * params.step;
    const double m = sps * params.phonemes_per_syllable / params.frame_rate;
    if (!(m > 0.0 && m < 2.0)) throw std::invalid_argument("synthetic table: rate outside the reachable shift range");
    // q_k proportional to r^k on {0,1,2} with mean m:
    // (2 - m) r^2 + (1 - m) r - m = 0
    const double a = 2.0 - m;
    const double b = 1.0 - m;
    const double r = (-b + std::sqrt(b * b + 4.0 * a * m)) / (2.0 * a);
    const double z = 1.0 + r + r * r;
    const std::array<double, 3> q{1.0 / z, r / z, r * r / z};
    std::vector<double> hist(kDurationBins);
    for (int shift = 0; shift < 3; ++shift) {
      const double two = params.two_phoneme_frame_prob[static_cast<std::size_t>(shift)];
      hist[static_cast<std::size_t>(shift * 2)] = q[static_cast<std::size_t>(shift)] * (1.0 - two);
      hist[static_cast<std::size_t>(shift * 2 + 1)] = q[static_cast<std::size_t>(shift)] * two;
    }
    anchors.push_back(RateAnchor{sps, DurationDistribution{std::move(hist)}});
  }
  return RateTargetTable(std::move(anchors));
}

RateTargetTable build_rate_table(std::istream& records, const TableBuildOptions& options) {
  if (!(options.bin_width > 0.0)) throw std::invalid_argument("table builder: bin width must be > 0");
  struct Bin {
    double sps_sum = 0.0;
    std::size_t n = 0;
    std::array<double, kDurationBins> counts{};
  };
  std::map<long long, Bin> bins;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(records, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto fields = split(t, ',');
    if (fields.size() != 2 + kDurationBins) {
      throw std::invalid_argument("table builder: line " + std::to_string(line_no) + " needs 8 fields");
    }
    const double sps = parse_double(fields[1], "sps");
    if (!(sps > 0.0)) throw std::invalid_argument("table builder: line " + std::to_string(line_no) + " has sps <= 0");
    Bin& bin = bins[std::llround(sps / options.bin_width)];
    bin.sps_sum += sps;
    bin.n += 1;
    for (std::size_t i = 0; i < kDurationBins; ++i) {
      const double c = parse_double(fields[2 + i], "count");
      if (c < 0.0) throw std::invalid_argument("table builder: negative count on line " + std::to_string(line_no));
      bin.counts[i] += c;
    }
  }
  std::vector<RateAnchor> anchors;
  for (const auto& [key, bin] : bins) {
    double total = 0.0;
    for (double c : bin.counts) total += c;
    if (total <= 0.0) continue;
    std::vector<double> h(bin.counts.begin(), bin.counts.end());
    anchors.push_back(RateAnchor{bin.sps_sum / static_cast<double>(bin.n), normalized(std::move(h))});
  }
  if (anchors.empty()) throw std::invalid_argument("table builder: no usable records");
  if (options.extend_to_cover) {
    if (anchors.front().sps > 1.0) anchors.insert(anchors.begin(), RateAnchor{1.0, anchors.front().histogram});
    if (anchors.back().sps < 7.0) anchors.push_back(RateAnchor{7.0, anchors.back().histogram});
  }
  return RateTargetTable(std::move(anchors), options.smoothing_epsilon);
}

AccumulatorWindow::AccumulatorWindow(double window_seconds, double smoothing_epsilon)
    : window_(window_seconds), epsilon_(smoothing_epsilon) {
  if (!(window_ > 0.0)) throw std::invalid_argument("accumulator: window must be > 0");
  if (!(epsilon_ > 0.0)) throw std::invalid_argument("accumulator: smoothing epsilon must be > 0");
}

void AccumulatorWindow::evict(double now) {
  const double cutoff = now - window_;
  while (!entries_.empty() && entries_.front().first < cutoff) {
    counts_[static_cast<std::size_t>(entries_.front().second)] -= 1;
    entries_.pop_front();
  }
}

DurationDistribution AccumulatorWindow::histogram() const {
  if (entries_.empty()) return DurationDistribution::uniform();
  std::vector<double> p(kDurationBins);
  const double n = static_cast<double>(entries_.size());
  for (std::size_t i = 0; i < kDurationBins; ++i) p[i] = static_cast<double>(counts_[i]) / n;
  return smooth(DurationDistribution{std::move(p)}, epsilon_);
}

DurationDistribution AccumulatorWindow::accumulate(int token, double t) {
  if (token < 0 || token >= static_cast<int>(kDurationBins)) throw std::invalid_argument("accumulator: token out of range");
  if (!std::isfinite(t)) throw std::invalid_argument("accumulator: non-finite timestamp");
  if (!entries_.empty() && t < entries_.back().first) {
    throw std::invalid_argument("accumulator: timestamp earlier than the last entry");
  }
  entries_.emplace_back(t, token);
  counts_[static_cast<std::size_t>(token)] += 1;
  evict(t);
  return histogram();
}

DurationDistribution AccumulatorWindow::read(double now) {
  evict(now);
  return histogram();
}

RateSchedule::RateSchedule(Kind kind, double a, double b, double seconds, std::size_t period)
    : kind_(kind), a_(a), b_(b), seconds_(seconds), period_(period) {
  validate();
}

void RateSchedule::validate() const {
  auto in_range = [](double v) { return std::isfinite(v) && v >= 0.5 && v <= 10.0; };
  if (!in_range(a_) || !in_range(b_)) throw std::invalid_argument("schedule: sps values must lie in [0.5, 10]");
  if (kind_ == Kind::linear_ramp && !(seconds_ > 0.0)) throw std::invalid_argument("schedule: ramp duration must be > 0");
  if (kind_ == Kind::phoneme_alternating && period_ < 1) throw std::invalid_argument("schedule: period must be >= 1");
}

RateSchedule RateSchedule::constant(double sps) { return RateSchedule(Kind::constant, sps, sps, 1.0, 1); }

RateSchedule RateSchedule::ramp(double start_sps, double end_sps, double seconds) {
  return RateSchedule(Kind::linear_ramp, start_sps, end_sps, seconds, 1);
}

RateSchedule RateSchedule::alternating(double first_sps, double second_sps, std::size_t period) {
  return RateSchedule(Kind::phoneme_alternating, first_sps, second_sps, 1.0, period);
}

RateSchedule RateSchedule::parse(std::string_view text) {
  const auto parts = split(text, ':');
  const std::string& kind = parts[0];
  if ((kind == "const" || kind == "constant") && parts.size() == 2) return constant(parse_double(parts[1], "sps"));
  if (kind == "ramp" && (parts.size() == 3 || parts.size() == 4)) {
    const double seconds = parts.size() == 4 ? parse_double(parts[3], "ramp seconds") : 20.0;
    return ramp(parse_double(parts[1], "sps"), parse_double(parts[2], "sps"), seconds);
  }
  if ((kind == "alt" || kind == "alternating") && (parts.size() == 3 || parts.size() == 4)) {
    std::size_t period = 40;
    if (parts.size() == 4) {
      const double p = parse_double(parts[3], "period");
      if (!(p >= 1.0) || p != std::floor(p)) throw std::invalid_argument("schedule: period must be a positive integer");
      period = static_cast<std::size_t>(p);
    }
    return alternating(parse_double(parts[1], "sps"), parse_double(parts[2], "sps"), period);
  }
  throw std::invalid_argument("schedule: expected const:S, ramp:A:B[:SECONDS] or alt:A:B[:PERIOD], got '" +
                              std::string(text) + "'");
}

double RateSchedule::at(double audio_seconds, std::size_t cursor) const {
  switch (kind_) {
    case Kind::constant:
      return a_;
    case Kind::linear_ramp: {
      const double f = std::clamp(audio_seconds / seconds_, 0.0, 1.0);
      return a_ + (b_ - a_) * f;
    }
    case Kind::phoneme_alternating:
      return (cursor / period_) % 2 == 0 ? a_ : b_;
  }
  return a_;
}

std::string RateSchedule::to_string() const {
  std::ostringstream out;
  switch (kind_) {
    case Kind::constant:
      out << "const:" << a_;
      break;
    case Kind::linear_ramp:
      out << "ramp:" << a_ << ':' << b_ << ':' << seconds_;
      break;
    case Kind::phoneme_alternating:
      out << "alt:" << a_ << ':' << b_ << ':' << period_;
      break;
  }
  return out.str();
}

double SpsCurve::value_at(double t) const {
  if (samples.empty()) throw std::invalid_argument("sps curve: empty");
  if (t <= samples.front().time) return samples.front().sps;
  if (t >= samples.back().time) return samples.back().sps;
  const auto hi = std::upper_bound(samples.begin(), samples.end(), t,
                                   [](double v, const SpsSample& s) { return v < s.time; });
  const auto lo = hi - 1;
  const double w = (t - lo->time) / (hi->time - lo->time);
  return lo->sps + w * (hi->sps - lo->sps);
}

SpsCurve estimate_sps(std::span<const FrameNuclei> frames, const SpsEstimateOptions& options) {
  if (!(options.window_seconds > 0.0) || !(options.overlap >= 0.0 && options.overlap < 1.0)) {
    throw std::invalid_argument("estimate_sps: bad window options");
  }
  SpsCurve out;
  if (frames.empty()) return out;
  for (std::size_t i = 1; i < frames.size(); ++i) {
    if (frames[i].time < frames[i - 1].time) throw std::invalid_argument("estimate_sps: frames are not time-ordered");
  }
  const double t0 = frames.front().time;
  const double span_end = frames.back().time + options.frame_period;
  const double hop = options.window_seconds * (1.0 - options.overlap);

  std::vector<SpsSample> centers;
  for (std::size_t j = 0;; ++j) {
    const double start = t0 + static_cast<double>(j) * hop;
    const double end = start + options.window_seconds;
    if (end > span_end + 1e-9) break;
    std::size_t nuclei = 0;
    for (const auto& f : frames) {
      if (f.time >= start && f.time < end) nuclei += f.nuclei;
    }
    centers.push_back(SpsSample{start + options.window_seconds / 2.0,
                                static_cast<double>(nuclei) / options.window_seconds});
  }
  if (centers.empty()) {
    std::size_t total = 0;
    for (const auto& f : frames) total += f.nuclei;
    const double span = span_end - t0;
    centers.push_back(SpsSample{t0 + span / 2.0, span > 0.0 ? static_cast<double>(total) / span : 0.0});
    out.single_window_fallback = true;
  }
  SpsCurve windowed{centers, out.single_window_fallback};
  double last_time = -std::numeric_limits<double>::infinity();
  for (const auto& f : frames) {
    if (f.time <= last_time) continue;
    out.samples.push_back(SpsSample{f.time, windowed.value_at(f.time)});
    last_time = f.time;
  }
  return out;
}

double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("pearson: length mismatch");
  if (a.size() < 2) throw std::invalid_argument("pearson: need at least two points");
  const double n = static_cast<double>(a.size());
  double ma = 0.0;
  double mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0;
  double saa = 0.0;
  double sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma;
    const double db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (!(saa > 0.0) || !(sbb > 0.0)) throw std::invalid_argument("pearson: correlation is undefined for a constant curve");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

double pearson(const SpsCurve& a, const SpsCurve& b) {
  if (a.samples.size() < 2 || b.samples.empty()) throw std::invalid_argument("pearson: need at least two points");
  std::vector<double> xa;
  std::vector<double> xb;
  xa.reserve(a.samples.size());
  xb.reserve(a.samples.size());
  for (const auto& s : a.samples) {
    xa.push_back(s.sps);
    xb.push_back(b.value_at(s.time));
  }
  return pearson(xa, xb);
}

ControllerOutput controller_step(const RateTargetTable& table, AccumulatorWindow& window, const RateSchedule& schedule,
                                 const ClockPosition& position, std::optional<double> override_sps) {
  const double sps = override_sps ? *override_sps : schedule.at(position.audio_seconds, position.cursor);
  auto lookup = table.target_distribution(sps);
  ControllerOutput out;
  out.target = std::move(lookup.dist);
  out.accumulated = window.read(position.audio_seconds);
  out.target_sps = lookup.sps;
  out.clamped = lookup.clamped;
  return out;
}

}  // namespace stts
