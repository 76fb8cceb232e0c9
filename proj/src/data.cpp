#include "mtcl/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "mtcl/errors.hpp"

namespace mtcl {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

int parse_binary_label(const std::string& s, const std::string& what, size_t line_no) {
  if (s == "0") return 0;
  if (s == "1") return 1;
  throw DataError("manifest line " + std::to_string(line_no) + ": " + what +
                  " must be 0 or 1, got '" + s + "'");
}

}  // namespace

DatasetManifest load_manifest(const fs::path& csv_path) {
  std::ifstream in(csv_path);
  if (!in) throw DataError("cannot open manifest " + csv_path.string());
  DatasetManifest m;
  m.base_dir = csv_path.has_parent_path() ? csv_path.parent_path() : fs::path(".");

  std::string line;
  if (!std::getline(in, line)) throw DataError("manifest " + csv_path.string() + " is empty");
  const auto header = split_csv_line(line);
  const std::vector<std::string> expected = {"patient_id", "t1c_path", "flairc_path",
                                             "adc_path",   "grade",    "invasion"};
  if (header != expected) {
    std::string got;
    for (const auto& h : header) got += (got.empty() ? "" : ",") + h;
    throw DataError("manifest header mismatch: expected patient_id,t1c_path,flairc_path,"
                    "adc_path,grade,invasion but got " + got);
  }

  std::set<std::string> seen_ids;
  size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != 6)
      throw DataError("manifest line " + std::to_string(line_no) + ": expected 6 fields, got " +
                      std::to_string(fields.size()));
    ManifestRow row;
    row.patient_id = fields[0];
    row.t1c_path = fields[1];
    row.flairc_path = fields[2];
    row.adc_path = fields[3];
    row.grade = parse_binary_label(fields[4], "grade", line_no);
    row.invasion = parse_binary_label(fields[5], "invasion", line_no);
    if (row.patient_id.empty())
      throw DataError("manifest line " + std::to_string(line_no) + ": empty patient_id");
    if (!seen_ids.insert(row.patient_id).second)
      throw DataError("duplicate patient_id '" + row.patient_id + "' in manifest");
    for (const std::string* p : {&row.t1c_path, &row.flairc_path, &row.adc_path}) {
      const fs::path resolved = m.base_dir / *p;
      if (!fs::exists(resolved))
        throw DataError("manifest line " + std::to_string(line_no) + ": missing volume file " +
                        resolved.string());
    }
    if (row.invasion == 1 && row.grade == 0)
      m.warnings.push_back("patient " + row.patient_id +
                           ": invasion=1 with grade=0 (invasion normally implies high grade)");
    m.rows.push_back(std::move(row));
  }
  return m;
}

void write_manifest(const fs::path& csv_path, const std::vector<ManifestRow>& rows) {
  std::ofstream out(csv_path);
  if (!out) throw DataError("cannot write manifest " + csv_path.string());
  out << "patient_id,t1c_path,flairc_path,adc_path,grade,invasion\n";
  for (const auto& r : rows)
    out << r.patient_id << ',' << r.t1c_path << ',' << r.flairc_path << ',' << r.adc_path << ','
        << r.grade << ',' << r.invasion << '\n';
}

Tensor load_volume(const fs::path& raw_path, std::array<double, 3>* spacing_out) {
  const fs::path sidecar = raw_path.string() + ".json";
  std::ifstream meta(sidecar);
  if (!meta) throw DataError("missing volume sidecar " + sidecar.string());
  nlohmann::json j;
  try {
    meta >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("invalid sidecar " + sidecar.string() + ": " + e.what());
  }
  const auto shape = j.at("shape").get<std::vector<long>>();
  if (shape.size() != 3) throw DataError("sidecar " + sidecar.string() + ": shape must have 3 dims");
  if (j.value("dtype", "f32le") != "f32le")
    throw DataError("sidecar " + sidecar.string() + ": unsupported dtype");
  if (spacing_out) {
    auto sp = j.value("spacing_mm", std::vector<double>{1.0, 1.0, 1.0});
    if (sp.size() != 3) throw DataError("sidecar " + sidecar.string() + ": bad spacing_mm");
    (*spacing_out) = {sp[0], sp[1], sp[2]};
  }

  const long numel = shape[0] * shape[1] * shape[2];
  std::ifstream raw(raw_path, std::ios::binary);
  if (!raw) throw DataError("cannot open volume " + raw_path.string());
  std::vector<float> buf(static_cast<size_t>(numel));
  raw.read(reinterpret_cast<char*>(buf.data()), numel * static_cast<long>(sizeof(float)));
  if (raw.gcount() != numel * static_cast<long>(sizeof(float)))
    throw DataError("volume " + raw_path.string() + " truncated (expected " +
                    std::to_string(numel) + " f32 values)");

  Tensor v({shape[0], shape[1], shape[2]});
  for (long i = 0; i < numel; ++i) v[i] = static_cast<double>(buf[static_cast<size_t>(i)]);
  return v;
}

void save_volume(const fs::path& raw_path, const Tensor& volume,
                 const std::array<double, 3>& spacing_mm) {
  if (volume.ndim() != 3) throw DataError("save_volume: expected a 3-d volume");
  std::ofstream raw(raw_path, std::ios::binary);
  if (!raw) throw DataError("cannot write volume " + raw_path.string());
  std::vector<float> buf(static_cast<size_t>(volume.numel()));
  for (long i = 0; i < volume.numel(); ++i) buf[static_cast<size_t>(i)] = static_cast<float>(volume[i]);
  raw.write(reinterpret_cast<const char*>(buf.data()),
            volume.numel() * static_cast<long>(sizeof(float)));

  nlohmann::json j;
  j["shape"] = volume.shape();
  j["spacing_mm"] = spacing_mm;
  j["dtype"] = "f32le";
  std::ofstream meta(raw_path.string() + ".json");
  if (!meta) throw DataError("cannot write sidecar for " + raw_path.string());
  meta << j.dump(2) << '\n';
}

MultiModalSample load_sample(const DatasetManifest& manifest, size_t row) {
  if (row >= manifest.rows.size()) throw DataError("load_sample: row out of range");
  const ManifestRow& r = manifest.rows[row];
  MultiModalSample s;
  s.patient_id = r.patient_id;
  s.label_grade = r.grade;
  s.label_invasion = r.invasion;
  s.t1c = load_volume(manifest.base_dir / r.t1c_path, &s.spacing_mm);
  s.flairc = load_volume(manifest.base_dir / r.flairc_path);
  s.adc = load_volume(manifest.base_dir / r.adc_path);
  if (!s.t1c.same_shape(s.flairc) || !s.t1c.same_shape(s.adc))
    throw DataError("patient " + r.patient_id + ": modality volumes disagree in shape");
  return s;
}

Tensor resize_trilinear(const Tensor& volume, const std::array<long, 3>& out_shape) {
  if (volume.ndim() != 3) throw DataError("resize: expected a 3-d volume");
  const long ih = volume.dim(0), iw = volume.dim(1), id = volume.dim(2);
  const long oh = out_shape[0], ow = out_shape[1], od = out_shape[2];
  if (oh < 1 || ow < 1 || od < 1) throw DataError("resize: non-positive target extent");

  auto src_coord = [](long out_i, long out_n, long in_n) {
    if (out_n == 1) return 0.5 * static_cast<double>(in_n - 1);
    return static_cast<double>(out_i) * static_cast<double>(in_n - 1) /
           static_cast<double>(out_n - 1);
  };

  Tensor out({oh, ow, od});
  const double* src = volume.data();
  double* dst = out.data();
  const long in_row = iw * id;
  for (long h = 0; h < oh; ++h) {
    const double fh = src_coord(h, oh, ih);
    const long h0 = std::min<long>(static_cast<long>(fh), ih - 1);
    const long h1 = std::min<long>(h0 + 1, ih - 1);
    const double th = fh - static_cast<double>(h0);
    for (long w = 0; w < ow; ++w) {
      const double fw = src_coord(w, ow, iw);
      const long w0 = std::min<long>(static_cast<long>(fw), iw - 1);
      const long w1 = std::min<long>(w0 + 1, iw - 1);
      const double tw = fw - static_cast<double>(w0);
      for (long d = 0; d < od; ++d) {
        const double fd = src_coord(d, od, id);
        const long d0 = std::min<long>(static_cast<long>(fd), id - 1);
        const long d1 = std::min<long>(d0 + 1, id - 1);
        const double td = fd - static_cast<double>(d0);
        auto at = [&](long a, long b, long c) { return src[a * in_row + b * id + c]; };
        const double c00 = at(h0, w0, d0) * (1 - td) + at(h0, w0, d1) * td;
        const double c01 = at(h0, w1, d0) * (1 - td) + at(h0, w1, d1) * td;
        const double c10 = at(h1, w0, d0) * (1 - td) + at(h1, w0, d1) * td;
        const double c11 = at(h1, w1, d0) * (1 - td) + at(h1, w1, d1) * td;
        const double c0 = c00 * (1 - tw) + c01 * tw;
        const double c1 = c10 * (1 - tw) + c11 * tw;
        dst[(h * ow + w) * od + d] = c0 * (1 - th) + c1 * th;
      }
    }
  }
  return out;
}

Tensor preprocess(const Tensor& volume, const std::array<long, 3>& target_shape, bool standardize) {
  if (volume.ndim() != 3) throw DataError("preprocess: expected a 3-d volume");
  const long ih = volume.dim(0), iw = volume.dim(1), id = volume.dim(2);
  if (ih < 2 || iw < 2 || id < 2)
    throw DataError("preprocess: degenerate volume " + shape_str(volume.shape()) +
                    " (every extent must be >= 2)");

  // Zero-pad the shorter in-plane side, centered. Depth stays as-is.
  const long side = std::max(ih, iw);
  Tensor padded = volume;
  if (ih != iw) {
    padded = Tensor::zeros({side, side, id});
    const long off_h = (side - ih) / 2;
    const long off_w = (side - iw) / 2;
    const double* src = volume.data();
    double* dst = padded.data();
    for (long h = 0; h < ih; ++h)
      for (long w = 0; w < iw; ++w)
        std::copy(src + (h * iw + w) * id, src + (h * iw + w + 1) * id,
                  dst + ((h + off_h) * side + (w + off_w)) * id);
  }

  Tensor resized = padded.shape() == std::vector<long>{target_shape[0], target_shape[1],
                                                       target_shape[2]}
                       ? padded
                       : resize_trilinear(padded, target_shape);

  if (!standardize) return resized.clone();

  const long n = resized.numel();
  double mean = 0.0;
  for (long i = 0; i < n; ++i) mean += resized[i];
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (long i = 0; i < n; ++i) {
    const double d = resized[i] - mean;
    var += d * d;
  }
  var /= static_cast<double>(n);
  const double sd = std::sqrt(var);
  Tensor out(resized.shape());
  if (sd < 1e-12) return out;  // constant volume standardizes to zeros
  for (long i = 0; i < n; ++i) out[i] = (resized[i] - mean) / sd;
  return out;
}

namespace {

Tensor flip_axis(const Tensor& v, int axis) {
  const long h = v.dim(0), w = v.dim(1), d = v.dim(2);
  Tensor out({h, w, d});
  const double* src = v.data();
  double* dst = out.data();
  for (long a = 0; a < h; ++a)
    for (long b = 0; b < w; ++b)
      for (long c = 0; c < d; ++c) {
        const long sa = axis == 0 ? h - 1 - a : a;
        const long sb = axis == 1 ? w - 1 - b : b;
        dst[(a * w + b) * d + c] = src[(sa * w + sb) * d + c];
      }
  return out;
}

Tensor crop_and_resize(const Tensor& v, const std::array<long, 3>& crop_size,
                       const std::array<long, 3>& offset) {
  const long w = v.dim(1), d = v.dim(2);
  Tensor cropped({crop_size[0], crop_size[1], crop_size[2]});
  const double* src = v.data();
  double* dst = cropped.data();
  for (long a = 0; a < crop_size[0]; ++a)
    for (long b = 0; b < crop_size[1]; ++b)
      std::copy(src + ((a + offset[0]) * w + (b + offset[1])) * d + offset[2],
                src + ((a + offset[0]) * w + (b + offset[1])) * d + offset[2] + crop_size[2],
                dst + (a * crop_size[1] + b) * crop_size[2]);
  return resize_trilinear(cropped, {v.dim(0), v.dim(1), v.dim(2)});
}

}  // namespace

MultiModalSample augment(const MultiModalSample& sample, const AugmentConfig& cfg, Rng& rng) {
  MultiModalSample out = sample;
  if (!cfg.enabled) return out;

  // All geometric draws happen before any voxel work so the transform is
  // identical across modalities.
  const bool flip_h = cfg.flip && cfg.flip_prob > 0.0 && rng.bernoulli(cfg.flip_prob);
  const bool flip_w = cfg.flip && cfg.flip_prob > 0.0 && rng.bernoulli(cfg.flip_prob);

  std::array<long, 3> crop_size{0, 0, 0}, crop_offset{0, 0, 0};
  bool do_crop = false;
  if (cfg.crop && cfg.crop_fraction > 0.0 && cfg.crop_fraction < 1.0) {
    const Tensor& ref = sample.t1c;
    for (int i = 0; i < 3; ++i) {
      const long extent = ref.dim(i);
      crop_size[static_cast<size_t>(i)] =
          std::max<long>(2, std::llround(cfg.crop_fraction * static_cast<double>(extent)));
      crop_offset[static_cast<size_t>(i)] = static_cast<long>(
          rng.uniform_int(static_cast<uint64_t>(extent - crop_size[static_cast<size_t>(i)] + 1)));
    }
    do_crop = crop_size[0] < ref.dim(0) || crop_size[1] < ref.dim(1) || crop_size[2] < ref.dim(2);
  }

  for (Modality m : {Modality::t1c, Modality::flairc, Modality::adc}) {
    Tensor v = sample.volume(m);
    if (flip_h) v = flip_axis(v, 0);
    if (flip_w) v = flip_axis(v, 1);
    if (do_crop) v = crop_and_resize(v, crop_size, crop_offset);
    if (cfg.noise && cfg.noise_sigma > 0.0) {
      Tensor noisy = v.clone();
      for (long i = 0; i < noisy.numel(); ++i) noisy[i] += rng.normal(0.0, cfg.noise_sigma);
      v = noisy;
    }
    out.volume(m) = v;
  }
  return out;
}

namespace {

SplitResult split_labelled(const std::vector<std::pair<int, int>>& labels,
                           const std::array<long, 3>& requested_counts, uint64_t seed) {
  std::array<std::vector<size_t>, 3> strata;
  for (size_t i = 0; i < labels.size(); ++i) {
    const auto [grade, invasion] = labels[i];
    const int s = grade == 0 ? 0 : (invasion == 0 ? 1 : 2);
    strata[static_cast<size_t>(s)].push_back(i);
  }
  static const char* stratum_names[3] = {"low-grade", "high-grade/noninvasion",
                                         "high-grade/invasion"};
  SplitResult out;
  Rng rng = Rng::stream(seed, 7001);
  for (int s = 0; s < 3; ++s) {
    auto& members = strata[static_cast<size_t>(s)];
    const long want = requested_counts[static_cast<size_t>(s)];
    if (members.empty())
      throw DataError(std::string("stratified_split: stratum ") + stratum_names[s] + " is empty");
    if (want < 0 || want > static_cast<long>(members.size()))
      throw DataError("stratified_split: stratum " + std::string(stratum_names[s]) + " has " +
                      std::to_string(members.size()) + " members, cannot draw " +
                      std::to_string(want));
    rng.shuffle(members);
    for (size_t i = 0; i < members.size(); ++i) {
      if (static_cast<long>(i) < want)
        out.train_indices.push_back(members[i]);
      else
        out.test_indices.push_back(members[i]);
    }
    if (want == static_cast<long>(members.size()))
      out.warnings.push_back(std::string("stratum ") + stratum_names[s] +
                             " contributed nothing to the test set");
  }
  std::sort(out.train_indices.begin(), out.train_indices.end());
  std::sort(out.test_indices.begin(), out.test_indices.end());
  return out;
}

std::array<long, 3> counts_from_fractions(const std::vector<std::pair<int, int>>& labels,
                                          const std::array<double, 3>& fractions) {
  std::array<long, 3> sizes{0, 0, 0};
  for (const auto& [grade, invasion] : labels)
    ++sizes[static_cast<size_t>(grade == 0 ? 0 : (invasion == 0 ? 1 : 2))];
  std::array<long, 3> counts{};
  for (int s = 0; s < 3; ++s) {
    const double f = fractions[static_cast<size_t>(s)];
    if (f < 0.0 || f > 1.0)
      throw DataError("stratified_split: train fraction must lie in [0, 1], got " +
                      std::to_string(f));
    counts[static_cast<size_t>(s)] =
        std::llround(f * static_cast<double>(sizes[static_cast<size_t>(s)]));
  }
  return counts;
}

std::vector<std::pair<int, int>> manifest_labels(const DatasetManifest& m) {
  std::vector<std::pair<int, int>> labels;
  labels.reserve(m.rows.size());
  for (const auto& r : m.rows) labels.emplace_back(r.grade, r.invasion);
  return labels;
}

}  // namespace

SplitResult stratified_split(const DatasetManifest& manifest,
                             const std::array<double, 3>& train_fractions, uint64_t seed) {
  const auto labels = manifest_labels(manifest);
  return split_labelled(labels, counts_from_fractions(labels, train_fractions), seed);
}

SplitResult stratified_split_counts(const DatasetManifest& manifest,
                                    const std::array<long, 3>& train_counts, uint64_t seed) {
  return split_labelled(manifest_labels(manifest), train_counts, seed);
}

SplitResult stratified_split_samples(const std::vector<MultiModalSample>& samples,
                                     const std::array<double, 3>& train_fractions, uint64_t seed) {
  std::vector<std::pair<int, int>> labels;
  labels.reserve(samples.size());
  for (const auto& s : samples) labels.emplace_back(s.label_grade, s.label_invasion);
  return split_labelled(labels, counts_from_fractions(labels, train_fractions), seed);
}

void SyntheticSpec::validate() const {
  if (n_samples < 1) throw DataError("synthetic spec: n_samples must be positive");
  for (long e : shape)
    if (e < 2) throw DataError("synthetic spec: every volume extent must be >= 2");
  if (prevalence_grade < 0.0 || prevalence_grade > 1.0 || prevalence_invasion < 0.0 ||
      prevalence_invasion > 1.0)
    throw DataError("synthetic spec: prevalences must lie in [0, 1]");
  if (prevalence_invasion > prevalence_grade)
    throw DataError("synthetic spec: inconsistent prevalences (invasion exceeds high grade)");
  if (signal_common < 0.0 || signal_grade < 0.0 || signal_invasion < 0.0)
    throw DataError("synthetic spec: signal amplitudes must be non-negative");
  if (noise_sigma <= 0.0) throw DataError("synthetic spec: noise_sigma must be positive");
}

Tensor synthetic_pattern(int kind, Modality modality, const std::array<long, 3>& shape) {
  // Fixed low-frequency triples per (kind, modality); distinct so that the
  // planted axes are separable.
  static const long freq[3][3][3] = {
      {{1, 1, 1}, {1, 2, 1}, {2, 1, 1}},  // common
      {{2, 2, 1}, {1, 1, 2}, {2, 2, 2}},  // grade
      {{3, 1, 1}, {2, 1, 2}, {1, 3, 1}},  // invasion
  };
  const int mi = modality == Modality::t1c ? 0 : (modality == Modality::flairc ? 1 : 2);
  const long fh = freq[kind][mi][0], fw = freq[kind][mi][1], fd = freq[kind][mi][2];
  const long h = shape[0], w = shape[1], d = shape[2];
  Tensor p({h, w, d});
  constexpr double pi = 3.14159265358979323846;
  long idx = 0;
  for (long a = 0; a < h; ++a) {
    const double sa = std::sin(pi * static_cast<double>(fh) * (static_cast<double>(a) + 0.5) /
                               static_cast<double>(h));
    for (long b = 0; b < w; ++b) {
      const double sb = std::sin(pi * static_cast<double>(fw) * (static_cast<double>(b) + 0.5) /
                                 static_cast<double>(w));
      for (long c = 0; c < d; ++c, ++idx) {
        const double sc = std::sin(pi * static_cast<double>(fd) * (static_cast<double>(c) + 0.5) /
                                   static_cast<double>(d));
        p[idx] = sa * sb * sc;
      }
    }
  }
  double rms = 0.0;
  for (long i = 0; i < p.numel(); ++i) rms += p[i] * p[i];
  rms = std::sqrt(rms / static_cast<double>(p.numel()));
  for (long i = 0; i < p.numel(); ++i) p[i] /= rms;
  return p;
}

std::vector<MultiModalSample> synthesize_dataset(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);

  Tensor patterns[3][3];
  for (int kind = 0; kind < 3; ++kind)
    for (Modality m : {Modality::t1c, Modality::flairc, Modality::adc})
      patterns[kind][static_cast<int>(m)] = synthetic_pattern(kind, m, spec.shape);

  const double p_inv_given_grade =
      spec.prevalence_grade > 0.0 ? spec.prevalence_invasion / spec.prevalence_grade : 0.0;

  std::vector<MultiModalSample> out;
  out.reserve(static_cast<size_t>(spec.n_samples));
  for (long s = 0; s < spec.n_samples; ++s) {
    // Both label draws always consume the stream so sample s is independent
    // of earlier outcomes.
    const bool grade_draw = rng.bernoulli(spec.prevalence_grade);
    const bool invasion_draw = rng.bernoulli(p_inv_given_grade);
    MultiModalSample sample;
    sample.label_grade = grade_draw ? 1 : 0;
    sample.label_invasion = (grade_draw && invasion_draw) ? 1 : 0;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "synth-%05ld", s);
    sample.patient_id = buf;

    const double common_amp =
        spec.signal_common * 0.5 *
        static_cast<double>(sample.label_grade + sample.label_invasion);
    const double grade_amp = spec.signal_grade * static_cast<double>(sample.label_grade);
    const double invasion_amp = spec.signal_invasion * static_cast<double>(sample.label_invasion);

    for (Modality m : {Modality::t1c, Modality::flairc, Modality::adc}) {
      const int mi = static_cast<int>(m);
      Tensor v({spec.shape[0], spec.shape[1], spec.shape[2]});
      const double* pc = patterns[0][mi].data();
      const double* pg = patterns[1][mi].data();
      const double* pi_ = patterns[2][mi].data();
      for (long i = 0; i < v.numel(); ++i)
        v[i] = spec.noise_sigma * rng.normal() + common_amp * pc[i] + grade_amp * pg[i] +
               invasion_amp * pi_[i];
      sample.volume(m) = v;
    }
    out.push_back(std::move(sample));
  }
  return out;
}

VolumeBatch make_batch(const std::vector<const MultiModalSample*>& samples) {
  if (samples.empty()) throw DataError("make_batch: empty batch");
  const long n = static_cast<long>(samples.size());
  const auto& ref_shape = samples[0]->t1c.shape();
  VolumeBatch batch;
  auto stack = [&](Modality m) {
    Tensor stacked({n, 1, ref_shape[0], ref_shape[1], ref_shape[2]});
    const long block = ref_shape[0] * ref_shape[1] * ref_shape[2];
    for (long i = 0; i < n; ++i) {
      const Tensor& v = samples[static_cast<size_t>(i)]->volume(m);
      if (v.shape() != ref_shape)
        throw DataError("make_batch: sample " + samples[static_cast<size_t>(i)]->patient_id +
                        " volume shape differs within the batch");
      std::copy(v.data(), v.data() + block, stacked.data() + i * block);
    }
    return stacked;
  };
  batch.t1c = stack(Modality::t1c);
  batch.flairc = stack(Modality::flairc);
  batch.adc = stack(Modality::adc);
  batch.grade.reserve(static_cast<size_t>(n));
  batch.invasion.reserve(static_cast<size_t>(n));
  for (const auto* s : samples) {
    batch.grade.push_back(s->label_grade);
    batch.invasion.push_back(s->label_invasion);
  }
  return batch;
}

}  // namespace mtcl
