#include "dtmm/cost_model.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>

namespace dtmm {

void LatencyParams::validate() const {
  for (double v : {t_mem, t_idx, t_com, t_post})
    if (!(v >= 0.0) || !std::isfinite(v)) throw DataError("latency params must be finite and >= 0");
  if (lanes == 0) throw DataError("latency params: lanes must be positive");
}

namespace {

void check_lengths(std::span<const ConvLayerSpec> specs, const StrategyVector& s) {
  if (specs.size() != s.size()) throw DataError("strategy length != layer count");
  s.validate();
}

double ceil_div(std::size_t a, std::size_t b) { return static_cast<double>((a + b - 1) / b); }

}  // namespace

double model_size(std::span<const ConvLayerSpec> specs, const StrategyVector& s, unsigned m,
                  unsigned m0) {
  check_lengths(specs, s);
  double weights = 0.0;
  double index = 0.0;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const double keep = 1.0 - s[i];
    weights += keep * static_cast<double>(specs[i].weight_count());
    index += keep * static_cast<double>(specs[i].filterlet_count());
  }
  return (m * weights + m0 * index) / 8.0;
}

double runtime_memory(std::span<const ConvLayerSpec> specs, std::span<const std::size_t> live_filters,
                      unsigned m) {
  if (specs.empty()) return 0.0;
  if (live_filters.size() != specs.size()) throw DataError("runtime_memory: length mismatch");
  for (std::size_t i = 1; i < specs.size(); ++i)
    if (specs[i].channels != specs[i - 1].n_filters)
      throw TopologyError("runtime_memory: layers do not form a sequential chain");

  const double bytes = m / 8.0;
  double prev = static_cast<double>(specs[0].input_h * specs[0].input_w * specs[0].channels) * bytes;
  double peak = 0.0;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const double cur = static_cast<double>(live_filters[i] * specs[i].output_positions()) * bytes;
    peak = std::max(peak, prev + cur);
    prev = cur;
  }
  return peak;
}

double runtime_memory(std::span<const ConvLayerSpec> specs, std::span<const FilterletMask> masks,
                      unsigned m) {
  if (masks.size() != specs.size()) throw DataError("runtime_memory: mask count mismatch");
  std::vector<std::size_t> live(specs.size());
  for (std::size_t i = 0; i < specs.size(); ++i) live[i] = masks[i].live_filters();
  return runtime_memory(specs, live, m);
}

double runtime_memory(std::span<const ConvLayerSpec> specs, const StrategyVector& s, unsigned m) {
  check_lengths(specs, s);
  std::vector<std::size_t> live(specs.size());
  for (std::size_t i = 0; i < specs.size(); ++i)
    live[i] = std::min(specs[i].n_filters, kept_count(specs[i].filterlet_count(), s[i]));
  return runtime_memory(specs, live, m);
}

double layer_latency(const ConvLayerSpec& spec, double alpha, const LatencyParams& p) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw DomainError("alpha outside [0, 1]");
  const double hwc = static_cast<double>(spec.filter_size());
  const double nhw = static_cast<double>(spec.filterlet_count());
  const double t_ft = hwc * p.t_mem;
  const double t_cm = nhw * (1.0 - alpha) * (p.t_idx + ceil_div(spec.channels, p.lanes) * p.t_com);
  const double t_ps = static_cast<double>(spec.n_filters) * p.t_post;
  return (t_ft + t_cm + t_ps) * static_cast<double>(spec.output_positions());
}

double total_time(std::span<const ConvLayerSpec> specs, const StrategyVector& s,
                  const LatencyParams& p) {
  check_lengths(specs, s);
  double total = 0.0;
  for (std::size_t i = 0; i < specs.size(); ++i) total += layer_latency(specs[i], s[i], p);
  return total;
}

namespace {

constexpr const char* kParamNames[4] = {"t_mem", "t_idx", "t_com", "t_post"};

Eigen::RowVector4d features(const ConvLayerSpec& spec, double alpha, std::size_t lanes) {
  const double pos = static_cast<double>(spec.output_positions());
  const double work = static_cast<double>(spec.filterlet_count()) * (1.0 - alpha) * pos;
  return {static_cast<double>(spec.filter_size()) * pos, work, work * ceil_div(spec.channels, lanes),
          static_cast<double>(spec.n_filters) * pos};
}

}  // namespace

LatencyFit fit_latency_params(std::span<const LatencySample> samples, std::size_t lanes) {
  if (samples.size() < 4) throw FitError("latency fit needs at least 4 samples");
  if (lanes == 0) throw FitError("latency fit: lanes must be positive");
  const auto rows = static_cast<Eigen::Index>(samples.size());
  Eigen::MatrixXd a(rows, 4);
  Eigen::VectorXd b(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& s = samples[static_cast<std::size_t>(r)];
    if (!(s.alpha >= 0.0 && s.alpha <= 1.0)) throw DomainError("latency sample alpha outside [0, 1]");
    a.row(r) = features(s.spec, s.alpha, lanes);
    b(r) = s.cycles;
  }

  // Column scaling keeps the conditioning independent of layer size.
  Eigen::Vector4d scale = a.colwise().norm().transpose();
  for (int c = 0; c < 4; ++c)
    if (scale(c) == 0.0) throw FitError(std::string("latency fit: no sample exercises ") + kParamNames[c]);
  const Eigen::MatrixXd as = a * scale.cwiseInverse().asDiagonal();

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(as, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  if (sv(3) <= 1e-10 * sv(0)) {
    const Eigen::Vector4d dir = svd.matrixV().col(3);
    std::ostringstream os;
    os << "latency fit: design matrix is rank deficient along (";
    for (int c = 0; c < 4; ++c) os << (c ? ", " : "") << kParamNames[c] << "=" << dir(c);
    os << ")";
    throw FitError(os.str());
  }

  // Non-negative least squares by enumerating supports: the NNLS optimum is
  // the unconstrained optimum on its support.
  Eigen::Vector4d best = Eigen::Vector4d::Zero();
  double best_res = b.squaredNorm();
  for (int support = 1; support < 16; ++support) {
    std::vector<int> cols;
    for (int c = 0; c < 4; ++c)
      if (support & (1 << c)) cols.push_back(c);
    Eigen::MatrixXd sub(rows, static_cast<Eigen::Index>(cols.size()));
    for (std::size_t k = 0; k < cols.size(); ++k) sub.col(static_cast<Eigen::Index>(k)) = as.col(cols[k]);
    const Eigen::VectorXd x = sub.colPivHouseholderQr().solve(b);
    if ((x.array() < 0.0).any()) continue;
    const double res = (sub * x - b).squaredNorm();
    if (res < best_res) {
      best_res = res;
      best.setZero();
      for (std::size_t k = 0; k < cols.size(); ++k) best(cols[k]) = x(static_cast<Eigen::Index>(k));
    }
  }
  const Eigen::Vector4d theta = best.cwiseQuotient(scale);

  LatencyFit fit;
  fit.params = {theta(0), theta(1), theta(2), theta(3), lanes};
  fit.train_mse = normalized_mse(samples, fit.params);
  return fit;
}

double normalized_mse(std::span<const LatencySample> samples, const LatencyParams& p) {
  if (samples.empty()) return 0.0;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& s : samples) {
    lo = std::min(lo, s.cycles);
    hi = std::max(hi, s.cycles);
  }
  const double range = hi > lo ? hi - lo : 1.0;
  double sum = 0.0;
  for (const auto& s : samples) {
    const double err = (layer_latency(s.spec, s.alpha, p) - s.cycles) / range;
    sum += err * err;
  }
  return sum / static_cast<double>(samples.size());
}

void write_latency_params(std::ostream& os, const LatencyParams& p) {
  os.precision(17);
  os << "t_mem=" << p.t_mem << "\nt_idx=" << p.t_idx << "\nt_com=" << p.t_com
     << "\nt_post=" << p.t_post << "\nlanes=" << p.lanes << '\n';
}

LatencyParams read_latency_params(std::istream& is) {
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError("latency params: expected key=value, got '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto get = [&](const char* key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw DataError(std::string("latency params: missing ") + key);
    try {
      return std::stod(it->second);
    } catch (const std::exception&) {
      throw DataError(std::string("latency params: bad value for ") + key);
    }
  };
  LatencyParams p{get("t_mem"), get("t_idx"), get("t_com"), get("t_post"),
                  static_cast<std::size_t>(get("lanes"))};
  p.validate();
  return p;
}

void write_samples_csv(std::ostream& os, std::span<const LatencySample> samples) {
  os.precision(17);
  os << "N,H,W,C,alpha,cycles,FH,FW\n";
  for (const auto& s : samples)
    os << s.spec.n_filters << ',' << s.spec.kernel_h << ',' << s.spec.kernel_w << ','
       << s.spec.channels << ',' << s.alpha << ',' << s.cycles << ',' << s.spec.out_h() << ','
       << s.spec.out_w() << '\n';
}

std::vector<LatencySample> read_samples_csv(std::istream& is) {
  std::vector<LatencySample> out;
  std::string line;
  bool header = true;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (header) {
      header = false;
      if (line.rfind("N,", 0) == 0) continue;
    }
    std::vector<double> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        f.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw DataError("samples csv: bad number '" + cell + "'");
      }
    }
    if (f.size() != 8) throw DataError("samples csv: expected 8 columns");
    LatencySample s;
    s.spec.n_filters = static_cast<std::size_t>(f[0]);
    s.spec.kernel_h = static_cast<std::size_t>(f[1]);
    s.spec.kernel_w = static_cast<std::size_t>(f[2]);
    s.spec.channels = static_cast<std::size_t>(f[3]);
    s.alpha = f[4];
    s.cycles = f[5];
    s.spec.stride = 1;
    s.spec.input_h = static_cast<std::size_t>(f[6]) + s.spec.kernel_h - 1;
    s.spec.input_w = static_cast<std::size_t>(f[7]) + s.spec.kernel_w - 1;
    s.spec.validate();
    out.push_back(s);
  }
  return out;
}

}  // namespace dtmm
