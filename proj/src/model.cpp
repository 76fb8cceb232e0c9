#include "mtcl/model.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "mtcl/errors.hpp"

namespace mtcl {

namespace {

// Initialization stream ids; one per head group so each group is independent
// of the others and of the order in which optional branches are built.
enum Stream : uint64_t {
  kStreamEncT1c = 1,
  kStreamEncFlairc = 2,
  kStreamEncAdc = 3,
  kStreamDisentangle = 4,
  kStreamAlignProject = 5,
  kStreamMainHeads = 6,
  kStreamAuxHeads = 7,
  kStreamDropout = 8,
};

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

Tensor row_of(const Tensor& t, long row) {
  if (!t.defined()) return Tensor();
  const long n = t.dim(0);
  const long block = t.numel() / n;
  std::vector<long> shape(t.shape().begin() + 1, t.shape().end());
  Tensor out(shape);
  std::copy(t.data() + row * block, t.data() + (row + 1) * block, out.data());
  return out;
}

}  // namespace

CommonFeed parse_common_feed(const std::string& s) {
  if (s == "raw") return CommonFeed::raw_common;
  if (s == "aligned") return CommonFeed::aligned_common;
  throw ConfigError("unknown common_feed '" + s + "' (expected raw|aligned)");
}

BaselineMode parse_baseline_mode(const std::string& s) {
  if (s == "proposed") return BaselineMode::proposed;
  if (s == "efmt") return BaselineMode::efmt;
  if (s == "mfmt") return BaselineMode::mfmt;
  throw ConfigError("unknown baseline '" + s + "' (expected proposed|efmt|mfmt)");
}

ModelConfig ModelConfig::full_defaults() {
  ModelConfig c;
  c.scale = Scale::full;
  c.in_shape = {128, 128, 24};
  c.feature_channels = 512;
  c.embed_dim = 128;
  return c;
}

ModelConfig ModelConfig::tiny_defaults() { return ModelConfig{}; }

void ModelConfig::validate() const {
  for (long e : in_shape)
    if (e < 2) throw ConfigError("model: every in_shape extent must be >= 2");
  if (feature_channels < 1) throw ConfigError("model: feature_channels must be positive");
  if (embed_dim < 1 || embed_dim > feature_channels)
    throw ConfigError("model: embed_dim must lie in [1, feature_channels]");
  if (num_tasks != 2) throw ConfigError("model: exactly two tasks are supported");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0)
    throw ConfigError("model: dropout must lie in [0, 1)");
  if (warmup_epochs < 0) throw ConfigError("model: warmup_epochs must be non-negative");
  if (alpha < 0.0 || beta < 0.0) throw ConfigError("model: alpha and beta must be non-negative");
  if (temperature <= 0.0) throw ConfigError("model: temperature must be positive");
  if (disentangle_kernel_depth != 1 && disentangle_kernel_depth != 2)
    throw ConfigError("model: disentangle_kernel_depth must be 1 or 2");
}

std::vector<long> ModelConfig::main_hidden() const {
  return {feature_channels / 2, std::max<long>(feature_channels / 16, 4)};
}

std::vector<long> ModelConfig::aux_hidden() const {
  return {feature_channels, feature_channels / 2, std::max<long>(feature_channels / 16, 4)};
}

void AblationFlags::validate() const {
  if (l_con && !tc)
    throw ConfigError("ablation: the contrastive loss requires the task-common branch (l_con "
                      "implies tc)");
}

TotalLossArgs to_loss_args(const BatchOutputs& out, const AblationFlags& ab) {
  TotalLossArgs args;
  args.main_inv = out.main_inv;
  args.main_men = out.main_men;
  if (ab.aux) {
    args.aux_inv = out.aux_inv;
    args.aux_men = out.aux_men;
  }
  if (ab.tc && ab.l_con) {
    args.common_inv = out.common_inv;
    args.common_men = out.common_men;
    args.proj_inv = out.proj_inv;
    args.proj_men = out.proj_men;
  }
  return args;
}

ModelOutputs extract_sample(const BatchOutputs& out, long row) {
  ModelOutputs mo;
  mo.main_logits_inv = row_of(out.main_inv.v, row);
  mo.main_logits_men = row_of(out.main_men.v, row);
  if (out.aux_inv) mo.aux_logits_inv = row_of(out.aux_inv->v, row);
  if (out.aux_men) mo.aux_logits_men = row_of(out.aux_men->v, row);
  if (out.feature_maps.size() == 3) {
    mo.features.feat_t1c = row_of(out.feature_maps[0].v, row);
    mo.features.feat_flairc = row_of(out.feature_maps[1].v, row);
    mo.features.feat_adc = row_of(out.feature_maps[2].v, row);
  }
  if (out.task_inv) mo.features.task_inv = row_of(out.task_inv->v, row);
  if (out.task_men) mo.features.task_men = row_of(out.task_men->v, row);
  if (out.common) mo.features.common = row_of(out.common->v, row);
  if (out.common_inv) mo.features.common_inv = row_of(out.common_inv->v, row);
  if (out.common_men) mo.features.common_men = row_of(out.common_men->v, row);
  if (out.proj_inv) mo.features.proj_inv = row_of(out.proj_inv->v, row);
  if (out.proj_men) mo.features.proj_men = row_of(out.proj_men->v, row);
  return mo;
}

std::vector<Parameter*> JointModel::parameters() {
  NamedTensors named;
  collect(named);
  return named.param_ptrs();
}

ModelOutputs JointModel::forward_sample(const MultiModalSample& sample, Mode mode) {
  std::vector<const MultiModalSample*> one{&sample};
  const VolumeBatch batch = make_batch(one);
  BatchOutputs out = forward(nullptr, batch, mode == Mode::train);
  return extract_sample(out, 0);
}

// ---------------------------------------------------------------------------
// MultiTaskModel
// ---------------------------------------------------------------------------

MultiTaskModel::MultiTaskModel(const ModelConfig& cfg, const AblationFlags& ablation)
    : cfg_(cfg), ablation_(ablation), dropout_rng_(Rng::stream(cfg.seed, kStreamDropout)) {
  cfg_.validate();
  ablation_.validate();
  const long c = cfg_.feature_channels;

  {
    Rng r = Rng::stream(cfg_.seed, kStreamEncT1c);
    enc_t1c_ = std::make_unique<ResNet3dEncoder>(EncoderTopology::make(cfg_.scale, c, 1), r);
  }
  {
    Rng r = Rng::stream(cfg_.seed, kStreamEncFlairc);
    enc_flairc_ = std::make_unique<ResNet3dEncoder>(EncoderTopology::make(cfg_.scale, c, 1), r);
  }
  {
    Rng r = Rng::stream(cfg_.seed, kStreamEncAdc);
    enc_adc_ = std::make_unique<ResNet3dEncoder>(EncoderTopology::make(cfg_.scale, c, 1), r);
  }

  const auto fshape = feature_map_shape();
  const Dims3 dk{2, 2, cfg_.disentangle_kernel_depth};
  if (fshape[1] < dk.h || fshape[2] < dk.w || fshape[3] < dk.d)
    throw ConfigError("model: feature map " + shape_str({fshape[0], fshape[1], fshape[2], fshape[3]}) +
                      " is too small for the 2x2x" + std::to_string(dk.d) + " fusion kernel");
  {
    Rng r = Rng::stream(cfg_.seed, kStreamDisentangle);
    dis_inv_ = std::make_unique<Conv3d>(3 * c, c, dk, Dims3{1, 1, 1}, Dims3{0, 0, 0}, r);
    dis_men_ = std::make_unique<Conv3d>(3 * c, c, dk, Dims3{1, 1, 1}, Dims3{0, 0, 0}, r);
    if (ablation_.tc)
      dis_common_ = std::make_unique<Conv3d>(3 * c, c, dk, Dims3{1, 1, 1}, Dims3{0, 0, 0}, r);
  }
  if (ablation_.tc) {
    Rng r = Rng::stream(cfg_.seed, kStreamAlignProject);
    align_inv_ = std::make_unique<Linear>(c, cfg_.embed_dim, r);
    align_men_ = std::make_unique<Linear>(c, cfg_.embed_dim, r);
    project_inv_ = std::make_unique<Linear>(c, cfg_.embed_dim, r);
    project_men_ = std::make_unique<Linear>(c, cfg_.embed_dim, r);
  }
  {
    Rng r = Rng::stream(cfg_.seed, kStreamMainHeads);
    long main_in = c;
    if (ablation_.tc)
      main_in += cfg_.common_feed == CommonFeed::raw_common ? c : cfg_.embed_dim;
    main_inv_ = std::make_unique<Mlp>(main_in, cfg_.main_hidden(), 2, cfg_.dropout_rate, r);
    main_men_ = std::make_unique<Mlp>(main_in, cfg_.main_hidden(), 2, cfg_.dropout_rate, r);
  }
  if (ablation_.aux) {
    Rng r = Rng::stream(cfg_.seed, kStreamAuxHeads);
    aux_inv_ = std::make_unique<Mlp>(c, cfg_.aux_hidden(), 2, cfg_.dropout_rate, r);
    aux_men_ = std::make_unique<Mlp>(c, cfg_.aux_hidden(), 2, cfg_.dropout_rate, r);
  }
}

std::array<long, 4> MultiTaskModel::feature_map_shape() const {
  const auto topo = EncoderTopology::make(cfg_.scale, cfg_.feature_channels, 1);
  return encoder_output_shape(topo, cfg_.in_shape[0], cfg_.in_shape[1], cfg_.in_shape[2]);
}

ResNet3dEncoder& MultiTaskModel::encoder(Modality m) {
  switch (m) {
    case Modality::t1c: return *enc_t1c_;
    case Modality::flairc: return *enc_flairc_;
    default: return *enc_adc_;
  }
}

Var MultiTaskModel::encode_modality(Tape* tape, const Var& volume, Modality modality,
                                    bool training) {
  if (volume.v.ndim() != 5 || volume.v.dim(1) != 1)
    throw ConfigError("encode_modality: expected [N, 1, H, W, D] input, got " +
                      shape_str(volume.v.shape()));
  if (volume.v.dim(2) != cfg_.in_shape[0] || volume.v.dim(3) != cfg_.in_shape[1] ||
      volume.v.dim(4) != cfg_.in_shape[2])
    throw ConfigError(std::string("encode_modality(") + to_string(modality) +
                      "): volume extents " + shape_str(volume.v.shape()) +
                      " do not match the configured input shape");
  return encoder(modality).forward(tape, volume, training, training && !stats_frozen_);
}

MultiTaskModel::Disentangled MultiTaskModel::fuse_and_disentangle(Tape* tape, const Var& feat_t1c,
                                                                  const Var& feat_flairc,
                                                                  const Var& feat_adc) {
  if (!feat_t1c.v.same_shape(feat_flairc.v) || !feat_t1c.v.same_shape(feat_adc.v))
    throw ConfigError("fuse_and_disentangle: the three feature maps must share a shape, got " +
                      shape_str(feat_t1c.v.shape()) + ", " + shape_str(feat_flairc.v.shape()) +
                      ", " + shape_str(feat_adc.v.shape()));
  const Var fused = concat_dim1(tape, {feat_t1c, feat_flairc, feat_adc});
  Disentangled out{global_avg_pool(tape, dis_inv_->forward(tape, fused)),
                   global_avg_pool(tape, dis_men_->forward(tape, fused)), std::nullopt};
  if (dis_common_) out.common = global_avg_pool(tape, dis_common_->forward(tape, fused));
  return out;
}

Var MultiTaskModel::align_common(Tape* tape, const Var& common, Task task) {
  if (!ablation_.tc) throw ConfigError("align_common: task-common branch is disabled");
  return (task == Task::invasion ? *align_inv_ : *align_men_).forward(tape, common);
}

Var MultiTaskModel::project_specific(Tape* tape, const Var& task_specific, Task task) {
  if (!ablation_.tc) throw ConfigError("project_specific: task-common branch is disabled");
  return (task == Task::invasion ? *project_inv_ : *project_men_).forward(tape, task_specific);
}

Var MultiTaskModel::predict_main(Tape* tape, const Var& task_specific,
                                 const std::optional<Var>& common, Task task, bool training) {
  if (ablation_.tc != common.has_value())
    throw ConfigError("predict_main: common-vector presence must match the task-common branch");
  Var input = common ? concat_dim1(tape, {task_specific, *common}) : task_specific;
  return (task == Task::invasion ? *main_inv_ : *main_men_)
      .forward(tape, input, training, dropout_rng_);
}

Var MultiTaskModel::predict_aux(Tape* tape, const Var& task_specific, Task task, bool training) {
  if (!ablation_.aux) throw ConfigError("predict_aux: auxiliary branch is disabled");
  return (task == Task::invasion ? *aux_inv_ : *aux_men_)
      .forward(tape, task_specific, training, dropout_rng_);
}

BatchOutputs MultiTaskModel::forward(Tape* tape, const VolumeBatch& batch, bool training) {
  BatchOutputs out;
  const Var vol_t{batch.t1c, -1}, vol_f{batch.flairc, -1}, vol_a{batch.adc, -1};
  Var f_t = encode_modality(tape, vol_t, Modality::t1c, training);
  Var f_f = encode_modality(tape, vol_f, Modality::flairc, training);
  Var f_a = encode_modality(tape, vol_a, Modality::adc, training);
  out.feature_maps = {f_t, f_f, f_a};

  Disentangled dis = fuse_and_disentangle(tape, f_t, f_f, f_a);
  out.task_inv = dis.task_inv;
  out.task_men = dis.task_men;
  out.common = dis.common;

  std::optional<Var> main_common_inv, main_common_men;
  if (ablation_.tc) {
    out.common_inv = align_common(tape, *dis.common, Task::invasion);
    out.common_men = align_common(tape, *dis.common, Task::meningioma);
    out.proj_inv = project_specific(tape, dis.task_inv, Task::invasion);
    out.proj_men = project_specific(tape, dis.task_men, Task::meningioma);
    if (cfg_.common_feed == CommonFeed::raw_common) {
      main_common_inv = dis.common;
      main_common_men = dis.common;
    } else {
      main_common_inv = out.common_inv;
      main_common_men = out.common_men;
    }
  }
  out.main_inv = predict_main(tape, dis.task_inv, main_common_inv, Task::invasion, training);
  out.main_men = predict_main(tape, dis.task_men, main_common_men, Task::meningioma, training);
  if (ablation_.aux) {
    out.aux_inv = predict_aux(tape, dis.task_inv, Task::invasion, training);
    out.aux_men = predict_aux(tape, dis.task_men, Task::meningioma, training);
  }

  if (!out.main_inv.v.all_finite() || !out.main_men.v.all_finite())
    throw NumericError("forward: non-finite main logits");
  if (out.aux_inv && (!out.aux_inv->v.all_finite() || !out.aux_men->v.all_finite()))
    throw NumericError("forward: non-finite auxiliary logits");
  return out;
}

void MultiTaskModel::collect(NamedTensors& out) {
  enc_t1c_->collect("encoder.t1c", out);
  enc_flairc_->collect("encoder.flairc", out);
  enc_adc_->collect("encoder.adc", out);
  dis_inv_->collect("disentangle.invasion", out);
  dis_men_->collect("disentangle.meningioma", out);
  if (dis_common_) dis_common_->collect("disentangle.common", out);
  if (align_inv_) align_inv_->collect("align.invasion", out);
  if (align_men_) align_men_->collect("align.meningioma", out);
  if (project_inv_) project_inv_->collect("project.invasion", out);
  if (project_men_) project_men_->collect("project.meningioma", out);
  main_inv_->collect("main.invasion", out);
  main_men_->collect("main.meningioma", out);
  if (aux_inv_) aux_inv_->collect("aux.invasion", out);
  if (aux_men_) aux_men_->collect("aux.meningioma", out);
}

// ---------------------------------------------------------------------------
// BaselineModel
// ---------------------------------------------------------------------------

BaselineModel::BaselineModel(BaselineMode mode, const ModelConfig& cfg)
    : mode_(mode), cfg_(cfg), dropout_rng_(Rng::stream(cfg.seed, kStreamDropout)) {
  if (mode_ == BaselineMode::proposed)
    throw ConfigError("BaselineModel: mode must be efmt or mfmt");
  cfg_.validate();
  const long c = cfg_.feature_channels;
  long fused_width = 0;
  if (mode_ == BaselineMode::efmt) {
    Rng r = Rng::stream(cfg_.seed, kStreamEncT1c);
    encoders_.push_back(
        std::make_unique<ResNet3dEncoder>(EncoderTopology::make(cfg_.scale, c, 3), r));
    fused_width = c;
  } else {
    for (uint64_t s : {kStreamEncT1c, kStreamEncFlairc, kStreamEncAdc}) {
      Rng r = Rng::stream(cfg_.seed, s);
      encoders_.push_back(
          std::make_unique<ResNet3dEncoder>(EncoderTopology::make(cfg_.scale, c, 1), r));
    }
    fused_width = 3 * c;
  }
  Rng r = Rng::stream(cfg_.seed, kStreamMainHeads);
  clf_inv_ = std::make_unique<Mlp>(fused_width, cfg_.aux_hidden(), 2, cfg_.dropout_rate, r);
  clf_men_ = std::make_unique<Mlp>(fused_width, cfg_.aux_hidden(), 2, cfg_.dropout_rate, r);
}

BatchOutputs BaselineModel::forward(Tape* tape, const VolumeBatch& batch, bool training) {
  BatchOutputs out;
  const bool update_stats = training && !stats_frozen_;
  Var pooled;
  if (mode_ == BaselineMode::efmt) {
    const Var stacked =
        concat_dim1(tape, {Var{batch.t1c, -1}, Var{batch.flairc, -1}, Var{batch.adc, -1}});
    Var fmap = encoders_[0]->forward(tape, stacked, training, update_stats);
    out.feature_maps = {fmap};
    pooled = global_avg_pool(tape, fmap);
  } else {
    std::vector<Var> vecs;
    const Tensor* vols[3] = {&batch.t1c, &batch.flairc, &batch.adc};
    for (size_t i = 0; i < 3; ++i) {
      Var fmap = encoders_[i]->forward(tape, Var{*vols[i], -1}, training, update_stats);
      out.feature_maps.push_back(fmap);
      vecs.push_back(global_avg_pool(tape, fmap));
    }
    pooled = concat_dim1(tape, vecs);
  }
  out.main_inv = clf_inv_->forward(tape, pooled, training, dropout_rng_);
  out.main_men = clf_men_->forward(tape, pooled, training, dropout_rng_);
  if (!out.main_inv.v.all_finite() || !out.main_men.v.all_finite())
    throw NumericError("forward: non-finite baseline logits");
  return out;
}

void BaselineModel::collect(NamedTensors& out) {
  if (mode_ == BaselineMode::efmt) {
    encoders_[0]->collect("encoder.stacked", out);
  } else {
    encoders_[0]->collect("encoder.t1c", out);
    encoders_[1]->collect("encoder.flairc", out);
    encoders_[2]->collect("encoder.adc", out);
  }
  clf_inv_->collect("classifier.invasion", out);
  clf_men_->collect("classifier.meningioma", out);
}

// ---------------------------------------------------------------------------
// Checkpointing
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[] = "MTCLCKPT1\n";

void write_raw(std::ofstream& out, const void* p, size_t n) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}
void write_u64(std::ofstream& out, uint64_t v) { write_raw(out, &v, sizeof(v)); }
void write_str(std::ofstream& out, const std::string& s) {
  write_u64(out, s.size());
  write_raw(out, s.data(), s.size());
}

void read_raw(std::ifstream& in, void* p, size_t n, const std::string& path) {
  in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (in.gcount() != static_cast<std::streamsize>(n))
    throw DataError("checkpoint " + path + " is truncated");
}
uint64_t read_u64(std::ifstream& in, const std::string& path) {
  uint64_t v = 0;
  read_raw(in, &v, sizeof(v), path);
  return v;
}
std::string read_str(std::ifstream& in, const std::string& path) {
  const uint64_t n = read_u64(in, path);
  if (n > (1ULL << 32)) throw DataError("checkpoint " + path + ": implausible string length");
  std::string s(n, '\0');
  read_raw(in, s.data(), n, path);
  return s;
}

std::string model_config_text(const JointModel& model) {
  const ModelConfig& c = model.config();
  const AblationFlags ab = model.ablation();
  std::ostringstream os;
  os << "kind=" << model.kind() << '\n'
     << "scale=" << to_string(c.scale) << '\n'
     << "in_shape=" << c.in_shape[0] << ',' << c.in_shape[1] << ',' << c.in_shape[2] << '\n'
     << "feature_channels=" << c.feature_channels << '\n'
     << "embed_dim=" << c.embed_dim << '\n'
     << "num_tasks=" << c.num_tasks << '\n'
     << "dropout=" << fmt_double(c.dropout_rate) << '\n'
     << "warmup_epochs=" << c.warmup_epochs << '\n'
     << "alpha=" << fmt_double(c.alpha) << '\n'
     << "beta=" << fmt_double(c.beta) << '\n'
     << "temperature=" << fmt_double(c.temperature) << '\n'
     << "seed=" << c.seed << '\n'
     << "common_feed=" << to_string(c.common_feed) << '\n'
     << "disentangle_kernel_depth=" << c.disentangle_kernel_depth << '\n'
     << "tc=" << (ab.tc ? 1 : 0) << '\n'
     << "l_con=" << (ab.l_con ? 1 : 0) << '\n'
     << "aux=" << (ab.aux ? 1 : 0) << '\n';
  return os.str();
}

std::map<std::string, std::string> parse_kv_text(const std::string& text,
                                                 const std::string& path) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw DataError("checkpoint " + path + ": malformed config line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

const std::string& kv_get(const std::map<std::string, std::string>& kv, const std::string& key,
                          const std::string& path) {
  auto it = kv.find(key);
  if (it == kv.end()) throw DataError("checkpoint " + path + ": missing config key " + key);
  return it->second;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, JointModel& model, long epoch) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw TrainError("cannot write checkpoint " + path.string());
  write_raw(out, kMagic, sizeof(kMagic) - 1);
  write_str(out, model_config_text(model));
  write_u64(out, static_cast<uint64_t>(epoch));

  NamedTensors named;
  model.collect(named);
  std::vector<std::pair<std::string, const Tensor*>> entries;
  for (const auto& [name, p] : named.params) entries.emplace_back(name, &p->value);
  for (const auto& [name, t] : named.buffers) entries.emplace_back(name, t);

  write_u64(out, entries.size());
  for (const auto& [name, t] : entries) {
    write_str(out, name);
    write_u64(out, static_cast<uint64_t>(t->ndim()));
    for (int i = 0; i < t->ndim(); ++i) write_u64(out, static_cast<uint64_t>(t->dim(i)));
    write_raw(out, t->data(), static_cast<size_t>(t->numel()) * sizeof(double));
  }
  if (!out) throw TrainError("failed while writing checkpoint " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string p = path.string();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + p);
  char magic[sizeof(kMagic) - 1];
  read_raw(in, magic, sizeof(magic), p);
  if (std::memcmp(magic, kMagic, sizeof(magic)) != 0)
    throw DataError("checkpoint " + p + ": bad magic");

  const auto kv = parse_kv_text(read_str(in, p), p);
  ModelConfig cfg;
  cfg.scale = parse_scale(kv_get(kv, "scale", p));
  {
    const std::string& shape = kv_get(kv, "in_shape", p);
    if (std::sscanf(shape.c_str(), "%ld,%ld,%ld", &cfg.in_shape[0], &cfg.in_shape[1],
                    &cfg.in_shape[2]) != 3)
      throw DataError("checkpoint " + p + ": bad in_shape '" + shape + "'");
  }
  cfg.feature_channels = std::stol(kv_get(kv, "feature_channels", p));
  cfg.embed_dim = std::stol(kv_get(kv, "embed_dim", p));
  cfg.num_tasks = std::stoi(kv_get(kv, "num_tasks", p));
  cfg.dropout_rate = std::stod(kv_get(kv, "dropout", p));
  cfg.warmup_epochs = std::stol(kv_get(kv, "warmup_epochs", p));
  cfg.alpha = std::stod(kv_get(kv, "alpha", p));
  cfg.beta = std::stod(kv_get(kv, "beta", p));
  cfg.temperature = std::stod(kv_get(kv, "temperature", p));
  cfg.seed = std::stoull(kv_get(kv, "seed", p));
  cfg.common_feed = parse_common_feed(kv_get(kv, "common_feed", p));
  cfg.disentangle_kernel_depth = std::stol(kv_get(kv, "disentangle_kernel_depth", p));
  AblationFlags ab;
  ab.tc = kv_get(kv, "tc", p) == "1";
  ab.l_con = kv_get(kv, "l_con", p) == "1";
  ab.aux = kv_get(kv, "aux", p) == "1";
  const std::string kind = kv_get(kv, "kind", p);

  LoadedCheckpoint result;
  result.model = build_model(cfg, ab, parse_baseline_mode(kind));
  result.epoch = static_cast<long>(read_u64(in, p));

  NamedTensors named;
  result.model->collect(named);
  std::map<std::string, Tensor*> expect;
  for (const auto& [name, param] : named.params) expect[name] = &param->value;
  for (const auto& [name, buf] : named.buffers) expect[name] = buf;

  const uint64_t count = read_u64(in, p);
  std::map<std::string, bool> seen;
  for (uint64_t i = 0; i < count; ++i) {
    const std::string name = read_str(in, p);
    const uint64_t ndim = read_u64(in, p);
    std::vector<long> shape(ndim);
    for (auto& d : shape) d = static_cast<long>(read_u64(in, p));
    auto it = expect.find(name);
    if (it == expect.end()) throw DataError("checkpoint " + p + ": unexpected tensor " + name);
    if (it->second->shape() != shape)
      throw DataError("checkpoint " + p + ": tensor " + name + " has shape " + shape_str(shape) +
                      ", model expects " + shape_str(it->second->shape()));
    read_raw(in, it->second->data(), static_cast<size_t>(it->second->numel()) * sizeof(double), p);
    seen[name] = true;
  }
  for (const auto& [name, t] : expect) {
    (void)t;
    if (!seen.count(name)) throw DataError("checkpoint " + p + ": missing tensor " + name);
  }
  return result;
}

std::unique_ptr<JointModel> build_model(const ModelConfig& cfg, const AblationFlags& ablation,
                                        BaselineMode mode) {
  if (mode == BaselineMode::proposed) return std::make_unique<MultiTaskModel>(cfg, ablation);
  return std::make_unique<BaselineModel>(mode, cfg);
}

}  // namespace mtcl
