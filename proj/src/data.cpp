#include "rarecast/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

namespace rarecast {

Eigen::Map<const Mat> WindowBatch::tokens() const {
  return {values.data(), static_cast<Eigen::Index>(size() * steps),
          static_cast<Eigen::Index>(features)};
}

Eigen::Map<const Mat> WindowBatch::window(std::size_t i) const {
  return {values.data() + i * steps * features, static_cast<Eigen::Index>(steps),
          static_cast<Eigen::Index>(features)};
}

Eigen::Map<Mat> WindowBatch::window(std::size_t i) {
  return {values.data() + i * steps * features, static_cast<Eigen::Index>(steps),
          static_cast<Eigen::Index>(features)};
}

std::size_t WindowBatch::positives() const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
}

WindowBatch WindowBatch::subset(std::span<const std::size_t> indices) const {
  WindowBatch out;
  out.steps = steps;
  out.features = features;
  const std::size_t cell = steps * features;
  out.values.reserve(indices.size() * cell);
  out.labels.reserve(indices.size());
  out.group_ids.reserve(indices.size());
  for (std::size_t i : indices) {
    if (i >= size()) throw ShapeError("subset index out of range");
    out.values.insert(out.values.end(), values.begin() + static_cast<std::ptrdiff_t>(i * cell),
                      values.begin() + static_cast<std::ptrdiff_t>((i + 1) * cell));
    out.labels.push_back(labels[i]);
    out.group_ids.push_back(group_ids[i]);
    if (!timestamps.empty()) out.timestamps.push_back(timestamps[i]);
  }
  return out;
}

void WindowBatch::validate() const {
  if (values.size() != size() * steps * features)
    throw ShapeError("window values do not match N x T x F");
  if (group_ids.size() != size()) throw ShapeError("group_ids length differs from labels");
  if (!timestamps.empty() && timestamps.size() != size())
    throw ShapeError("timestamps length differs from labels");
  for (int y : labels)
    if (y != 0 && y != 1) throw ShapeError("labels must be 0 or 1");
}

WindowBatch make_windows(const Mat& series, std::span<const int> labels_per_step,
                         std::size_t window_len, std::size_t stride, LabelRule rule) {
  const auto total = static_cast<std::size_t>(series.rows());
  if (total == 0) throw LengthError("empty series");
  if (labels_per_step.size() != total)
    throw LengthError("labels_per_step length differs from series length");
  if (window_len == 0 || window_len > total)
    throw LengthError("window_len " + std::to_string(window_len) + " exceeds series length " +
                      std::to_string(total));
  if (stride == 0) throw LengthError("stride must be >= 1");

  const std::size_t count = (total - window_len) / stride + 1;
  WindowBatch out;
  out.steps = window_len;
  out.features = static_cast<std::size_t>(series.cols());
  out.values.resize(count * window_len * out.features);
  out.labels.resize(count);
  out.group_ids.assign(count, 0);
  out.timestamps.resize(count);
  for (std::size_t w = 0; w < count; ++w) {
    const std::size_t start = w * stride;
    out.window(w) = series.middleRows(static_cast<Eigen::Index>(start),
                                      static_cast<Eigen::Index>(window_len));
    int label = labels_per_step[start] != 0 ? 1 : 0;
    if (rule == LabelRule::any_step) {
      for (std::size_t t = start; t < start + window_len; ++t) label |= labels_per_step[t] != 0;
    }
    out.labels[w] = label;
    out.timestamps[w] = static_cast<double>(start);
  }
  return out;
}

DataSplits group_stratified_split(const WindowBatch& batch, SplitFractions fractions,
                                  std::uint64_t seed) {
  batch.validate();
  const std::array<double, 3> frac{fractions.train, fractions.val, fractions.test};
  for (double f : frac)
    if (f < 0.0) throw SplitError("split fractions must be non-negative");
  if (std::abs(frac[0] + frac[1] + frac[2] - 1.0) > 1e-9)
    throw SplitError("split fractions must sum to 1");

  std::map<std::int64_t, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < batch.size(); ++i) members[batch.group_ids[i]].push_back(i);
  std::vector<std::int64_t> groups;
  groups.reserve(members.size());
  for (const auto& [g, idx] : members) groups.push_back(g);

  const auto wanted = static_cast<std::size_t>(std::count_if(frac.begin(), frac.end(),
                                                             [](double f) { return f > 0.0; }));
  if (groups.size() < std::max<std::size_t>(wanted, 3))
    throw SplitError("need at least " + std::to_string(std::max<std::size_t>(wanted, 3)) +
                     " distinct groups, have " + std::to_string(groups.size()));

  Rng rng = derive_rng(seed, 0x5b17);
  shuffle_in_place(groups, rng);

  std::array<std::vector<std::size_t>, 3> parts;
  std::size_t next = 0;
  for (std::size_t s = 0; s < 3; ++s) {
    if (frac[s] <= 0.0) continue;
    std::size_t later = 0;
    for (std::size_t r = s + 1; r < 3; ++r) later += frac[r] > 0.0;
    if (later == 0) {
      for (; next < groups.size(); ++next) {
        const auto& idx = members[groups[next]];
        parts[s].insert(parts[s].end(), idx.begin(), idx.end());
      }
      break;
    }
    const double quota = frac[s] * static_cast<double>(batch.size());
    while (next + later < groups.size() &&
           (parts[s].empty() || static_cast<double>(parts[s].size()) < quota)) {
      const auto& idx = members[groups[next++]];
      parts[s].insert(parts[s].end(), idx.begin(), idx.end());
    }
  }
  for (auto& p : parts) std::sort(p.begin(), p.end());
  return {batch.subset(parts[0]), batch.subset(parts[1]), batch.subset(parts[2])};
}

WindowBatch synth_generate(const SyntheticTaskSpec& spec) {
  if (!(spec.positive_rate > 0.0 && spec.positive_rate < 1.0))
    throw ConfigError("positive_rate must lie in (0, 1)");
  if (spec.n_windows == 0 || spec.steps == 0 || spec.features == 0)
    throw ConfigError("synthetic task dimensions must be positive");
  if (spec.precursor_length > spec.steps) throw ConfigError("precursor_length exceeds T");
  if (spec.signal_features > spec.features)
    throw ConfigError("signal_features exceeds feature count");
  if (!(spec.noise_persistence >= 0.0 && spec.noise_persistence < 1.0))
    throw ConfigError("noise_persistence must lie in [0, 1)");
  if (spec.n_groups == 0) throw ConfigError("n_groups must be positive");

  const std::size_t n = spec.n_windows;
  const std::size_t T = spec.steps;
  const std::size_t F = spec.features;
  WindowBatch out;
  out.steps = T;
  out.features = F;
  out.values.resize(n * T * F);
  out.labels.assign(n, 0);
  out.group_ids.resize(n);
  out.timestamps.resize(n);

  const auto n_pos = static_cast<std::size_t>(std::llround(static_cast<double>(n) * spec.positive_rate));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng place = derive_rng(spec.seed, 0x9051);
  shuffle_in_place(order, place);
  for (std::size_t k = 0; k < n_pos; ++k) out.labels[order[k]] = 1;

  const double phi = spec.noise_persistence;
  const double innov = std::sqrt(1.0 - phi * phi);
  Rng noise = derive_rng(spec.seed, 0x401e);
  for (std::size_t i = 0; i < n; ++i) {
    auto w = out.window(i);
    for (std::size_t f = 0; f < F; ++f) {
      double x = standard_normal(noise);
      for (std::size_t t = 0; t < T; ++t) {
        if (t > 0) x = phi * x + innov * standard_normal(noise);
        w(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(f)) = x;
      }
    }
    out.group_ids[i] = static_cast<std::int64_t>(i * spec.n_groups / n);
    out.timestamps[i] = static_cast<double>(i);
  }

  const std::size_t P = spec.precursor_length;
  for (std::size_t i = 0; i < n; ++i) {
    if (out.labels[i] == 0 || P == 0) continue;
    auto w = out.window(i);
    for (std::size_t k = 0; k < P; ++k) {
      const double ramp = spec.precursor_amplitude * static_cast<double>(k + 1) / static_cast<double>(P);
      const auto t = static_cast<Eigen::Index>(T - P + k);
      for (std::size_t f = 0; f < spec.signal_features; ++f) w(t, static_cast<Eigen::Index>(f)) += ramp;
    }
  }
  return out;
}

Standardizer fit_standardizer(const WindowBatch& train) {
  train.validate();
  if (train.empty()) throw ConfigError("cannot fit standardizer on an empty batch");
  const auto cells = train.tokens();
  Standardizer s;
  s.mean = cells.colwise().mean().transpose();
  s.std.resize(cells.cols());
  for (Eigen::Index f = 0; f < cells.cols(); ++f) {
    const auto col = cells.col(f);
    if (col.maxCoeff() == col.minCoeff()) s.mean(f) = col(0);
    const double var = (col.array() - s.mean(f)).square().mean();
    double sd = std::sqrt(var);
    if (!(sd >= Standardizer::kMinStd)) {
      sd = Standardizer::kMinStd;
      s.clamped_features.push_back(static_cast<std::size_t>(f));
    }
    s.std(f) = sd;
  }
  return s;
}

WindowBatch Standardizer::apply(const WindowBatch& batch) const {
  if (static_cast<Eigen::Index>(batch.features) != mean.size())
    throw ShapeError("standardizer feature count mismatch");
  WindowBatch out = batch;
  Eigen::Map<Mat> cells(out.values.data(), static_cast<Eigen::Index>(out.size() * out.steps),
                        static_cast<Eigen::Index>(out.features));
  cells = ((cells.rowwise() - mean.transpose()).array().rowwise() / std.transpose().array()).matrix();
  return out;
}

namespace {

std::vector<std::string> split_fields(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == delim) {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  for (auto& f : out) {
    const auto b = f.find_first_not_of(" \t\"");
    const auto e = f.find_last_not_of(" \t\"");
    f = b == std::string::npos ? std::string{} : f.substr(b, e - b + 1);
  }
  return out;
}

double parse_number(const std::string& cell, std::size_t row, const std::string& column) {
  try {
    std::size_t used = 0;
    const double v = std::stod(cell, &used);
    if (used != cell.size()) throw std::invalid_argument(cell);
    return v;
  } catch (const std::exception&) {
    throw ParseError("non-numeric cell '" + cell + "' in column '" + column + "' at row " +
                     std::to_string(row));
  }
}

}  // namespace

SensorTrace read_sensor_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string header;
  if (!std::getline(in, header)) throw ParseError("missing header row in " + path.string());
  const char delim = header.find(';') != std::string::npos ? ';' : ',';
  const auto names = split_fields(header, delim);
  const auto anomaly_it = std::find(names.begin(), names.end(), "anomaly");
  if (anomaly_it == names.end()) throw ParseError("missing 'anomaly' column in " + path.string());
  const auto anomaly_col = static_cast<std::size_t>(anomaly_it - names.begin());

  std::vector<std::size_t> sensor_cols;
  SensorTrace trace;
  for (std::size_t c = 1; c < names.size(); ++c) {
    if (c == anomaly_col || names[c] == "changepoint") continue;
    sensor_cols.push_back(c);
    trace.sensor_names.push_back(names[c]);
  }

  std::vector<double> flat;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_fields(line, delim);
    if (cells.size() != names.size())
      throw ParseError("row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                       " fields, expected " + std::to_string(names.size()));
    for (std::size_t c : sensor_cols) flat.push_back(parse_number(cells[c], row, names[c]));
    const double flag = parse_number(cells[anomaly_col], row, "anomaly");
    trace.anomaly.push_back(flag != 0.0 ? 1 : 0);
  }
  const auto steps = static_cast<Eigen::Index>(trace.anomaly.size());
  trace.values = Eigen::Map<Mat>(flat.data(), steps, static_cast<Eigen::Index>(sensor_cols.size()));
  return trace;
}

Mat stack_with_differences(const Mat& raw) {
  Mat out(raw.rows(), 2 * raw.cols());
  out.leftCols(raw.cols()) = raw;
  out.rightCols(raw.cols()).setZero();
  if (raw.rows() > 1)
    out.rightCols(raw.cols()).bottomRows(raw.rows() - 1) =
        raw.bottomRows(raw.rows() - 1) - raw.topRows(raw.rows() - 1);
  return out;
}

namespace {

void append_batch(WindowBatch& dst, const WindowBatch& src) {
  if (dst.empty() && dst.values.empty()) {
    dst.steps = src.steps;
    dst.features = src.features;
  }
  dst.values.insert(dst.values.end(), src.values.begin(), src.values.end());
  dst.labels.insert(dst.labels.end(), src.labels.begin(), src.labels.end());
  dst.group_ids.insert(dst.group_ids.end(), src.group_ids.begin(), src.group_ids.end());
  dst.timestamps.insert(dst.timestamps.end(), src.timestamps.begin(), src.timestamps.end());
}

}  // namespace

SkabDataset skab_ingest(std::span<const std::filesystem::path> csv_paths,
                        const SkabOptions& options) {
  if (csv_paths.empty()) throw ConfigError("no SKAB traces given");
  SkabDataset ds;
  DataSplits raw;
  std::size_t sensors = 0;
  for (std::size_t file = 0; file < csv_paths.size(); ++file) {
    const SensorTrace trace = read_sensor_csv(csv_paths[file]);
    if (file == 0) sensors = static_cast<std::size_t>(trace.values.cols());
    if (static_cast<std::size_t>(trace.values.cols()) != sensors)
      throw ShapeError("trace " + csv_paths[file].string() + " has a different sensor count");
    const Mat stacked = stack_with_differences(trace.values);
    const auto L = static_cast<std::size_t>(stacked.rows());
    const auto val_start = static_cast<std::size_t>(std::floor(options.fractions.train * static_cast<double>(L)));
    const auto test_start = static_cast<std::size_t>(
        std::floor((options.fractions.train + options.fractions.val) * static_cast<double>(L)));
    ds.boundaries.push_back({val_start, test_start});

    const std::array<std::pair<std::size_t, std::size_t>, 3> segs{
        std::pair{std::size_t{0}, val_start}, std::pair{val_start, test_start}, std::pair{test_start, L}};
    std::array<WindowBatch*, 3> dst{&raw.train, &raw.val, &raw.test};
    for (std::size_t s = 0; s < 3; ++s) {
      const auto [b, e] = segs[s];
      if (e - b < options.window_len) continue;
      const Mat seg = stacked.middleRows(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(e - b));
      std::span<const int> lab(trace.anomaly.data() + b, e - b);
      WindowBatch w = make_windows(seg, lab, options.window_len,
                                   s == 0 ? options.train_stride : options.eval_stride);
      std::fill(w.group_ids.begin(), w.group_ids.end(), static_cast<std::int64_t>(file));
      for (double& ts : w.timestamps) ts += static_cast<double>(b);
      append_batch(*dst[s], w);
    }
  }
  if (raw.train.empty()) throw LengthError("no training windows: traces shorter than window_len");
  ds.standardizer = fit_standardizer(raw.train);
  ds.splits.train = ds.standardizer.apply(raw.train);
  ds.splits.val = raw.val.empty() ? raw.val : ds.standardizer.apply(raw.val);
  ds.splits.test = raw.test.empty() ? raw.test : ds.standardizer.apply(raw.test);
  return ds;
}

static_assert(std::endian::native == std::endian::little, "batch container assumes little-endian");

namespace {

constexpr char kBatchMagic[4] = {'R', 'C', 'W', 'B'};
constexpr std::uint32_t kBatchVersion = 1;

template <class T>
void put(std::string& buf, const T& v) {
  buf.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

std::string serialize(const WindowBatch& batch) {
  batch.validate();
  std::string buf(kBatchMagic, 4);
  put(buf, kBatchVersion);
  put(buf, static_cast<std::uint64_t>(batch.size()));
  put(buf, static_cast<std::uint64_t>(batch.steps));
  put(buf, static_cast<std::uint64_t>(batch.features));
  buf.append(reinterpret_cast<const char*>(batch.values.data()), batch.values.size() * sizeof(double));
  for (int y : batch.labels) put(buf, static_cast<std::uint8_t>(y));
  for (auto g : batch.group_ids) put(buf, g);
  put(buf, static_cast<std::uint8_t>(batch.timestamps.empty() ? 0 : 1));
  buf.append(reinterpret_cast<const char*>(batch.timestamps.data()),
             batch.timestamps.size() * sizeof(double));
  return buf;
}

}  // namespace

void save_batch(const WindowBatch& batch, const std::filesystem::path& path) {
  const std::string buf = serialize(batch);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

WindowBatch load_batch(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  auto read = [&](void* dst, std::size_t n) {
    in.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (!in) throw ParseError("truncated batch file " + path.string());
  };
  char magic[4];
  read(magic, 4);
  if (std::memcmp(magic, kBatchMagic, 4) != 0) throw ParseError("not a window batch file: " + path.string());
  std::uint32_t version = 0;
  read(&version, sizeof version);
  if (version != kBatchVersion) throw ParseError("unsupported batch version " + std::to_string(version));
  std::uint64_t n = 0, t = 0, f = 0;
  read(&n, 8);
  read(&t, 8);
  read(&f, 8);
  WindowBatch b;
  b.steps = t;
  b.features = f;
  b.values.resize(n * t * f);
  read(b.values.data(), b.values.size() * sizeof(double));
  std::vector<std::uint8_t> lab(n);
  read(lab.data(), n);
  b.labels.assign(lab.begin(), lab.end());
  b.group_ids.resize(n);
  read(b.group_ids.data(), n * sizeof(std::int64_t));
  std::uint8_t has_ts = 0;
  read(&has_ts, 1);
  if (has_ts) {
    b.timestamps.resize(n);
    read(b.timestamps.data(), n * sizeof(double));
  }
  b.validate();
  return b;
}

std::uint64_t batch_fingerprint(const WindowBatch& batch) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : serialize(batch)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace rarecast
