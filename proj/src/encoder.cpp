#include "mtcl/encoder.hpp"

#include "mtcl/errors.hpp"

namespace mtcl {

EncoderTopology EncoderTopology::make(Scale scale, long feature_channels, long in_channels) {
  EncoderTopology t;
  t.in_channels = in_channels;
  if (scale == Scale::full) {
    if (feature_channels != 512)
      throw ConfigError("full-scale encoder is fixed at 512 feature channels, got " +
                        std::to_string(feature_channels));
    t.stem_channels = 64;
    t.stem_kernel = {7, 7, 7};
    t.stem_stride = {2, 2, 1};
    t.stem_pad = {3, 3, 3};
    t.pool_kernel = {3, 3, 3};
    t.pool_stride = {2, 2, 3};
    t.pool_pad = {1, 1, 0};
    t.stage_channels = {64, 128, 256, 512};
    t.stage_blocks = {3, 4, 6, 3};
    t.stage_strides = {Dims3{1, 1, 1}, Dims3{2, 2, 1}, Dims3{2, 2, 1}, Dims3{2, 2, 1}};
  } else {
    if (feature_channels < 8 || feature_channels % 4 != 0)
      throw ConfigError("tiny-scale feature channels must be a multiple of 4 and >= 8, got " +
                        std::to_string(feature_channels));
    const long base = feature_channels / 4;
    t.stem_channels = base;
    t.stem_kernel = {3, 3, 3};
    t.stem_stride = {2, 2, 1};
    t.stem_pad = {1, 1, 1};
    t.pool_kernel = {3, 3, 3};
    t.pool_stride = {2, 2, 2};
    t.pool_pad = {1, 1, 1};
    t.stage_channels = {base, 2 * base, 4 * base, 4 * base};
    t.stage_blocks = {1, 1, 1, 1};
    t.stage_strides = {Dims3{1, 1, 1}, Dims3{2, 2, 2}, Dims3{1, 1, 1}, Dims3{1, 1, 1}};
  }
  return t;
}

ResNet3dEncoder::Block::Block(long in_ch, long out_ch, Dims3 stride, Rng& rng)
    : conv1(in_ch, out_ch, {3, 3, 3}, stride, {1, 1, 1}, rng),
      bn1(out_ch),
      conv2(out_ch, out_ch, {3, 3, 3}, {1, 1, 1}, {1, 1, 1}, rng),
      bn2(out_ch) {
  const bool resample = in_ch != out_ch || stride.h != 1 || stride.w != 1 || stride.d != 1;
  if (resample) {
    shortcut = std::make_unique<Conv3d>(in_ch, out_ch, Dims3{1, 1, 1}, stride, Dims3{0, 0, 0}, rng);
    shortcut_bn = std::make_unique<BatchNorm3d>(out_ch);
  }
}

Var ResNet3dEncoder::Block::forward(Tape* tape, const Var& x, bool training, bool update_stats) {
  Var h = conv1.forward(tape, x);
  h = bn1.forward(tape, h, training, update_stats);
  h = relu(tape, h);
  h = conv2.forward(tape, h);
  h = bn2.forward(tape, h, training, update_stats);
  Var skip = x;
  if (shortcut) {
    skip = shortcut->forward(tape, x);
    skip = shortcut_bn->forward(tape, skip, training, update_stats);
  }
  return relu(tape, add(tape, h, skip));
}

void ResNet3dEncoder::Block::collect(const std::string& prefix, NamedTensors& out) {
  conv1.collect(prefix + ".conv1", out);
  bn1.collect(prefix + ".bn1", out);
  conv2.collect(prefix + ".conv2", out);
  bn2.collect(prefix + ".bn2", out);
  if (shortcut) {
    shortcut->collect(prefix + ".shortcut", out);
    shortcut_bn->collect(prefix + ".shortcut_bn", out);
  }
}

ResNet3dEncoder::ResNet3dEncoder(const EncoderTopology& topo, Rng& rng)
    : topo_(topo),
      stem_(topo.in_channels, topo.stem_channels, topo.stem_kernel, topo.stem_stride, topo.stem_pad,
            rng),
      stem_bn_(topo.stem_channels),
      pool_(topo.pool_kernel, topo.pool_stride, topo.pool_pad) {
  long in_ch = topo.stem_channels;
  stages_.resize(4);
  for (int s = 0; s < 4; ++s) {
    const long out_ch = topo.stage_channels[static_cast<size_t>(s)];
    const int blocks = topo.stage_blocks[static_cast<size_t>(s)];
    stages_[static_cast<size_t>(s)].reserve(static_cast<size_t>(blocks));
    for (int b = 0; b < blocks; ++b) {
      const Dims3 stride = b == 0 ? topo.stage_strides[static_cast<size_t>(s)] : Dims3{1, 1, 1};
      stages_[static_cast<size_t>(s)].emplace_back(in_ch, out_ch, stride, rng);
      in_ch = out_ch;
    }
  }
}

std::array<long, 4> encoder_output_shape(const EncoderTopology& topo, long ih, long iw, long id) {
  auto conv_dim = [](long in, long k, long s, long p, const std::string& where) {
    const long out = (in + 2 * p - k) / s + 1;
    if (in + 2 * p < k || out < 1)
      throw ConfigError("encoder " + where + ": extent " + std::to_string(in) +
                        " too small for kernel " + std::to_string(k));
    return out;
  };
  long h = conv_dim(ih, topo.stem_kernel.h, topo.stem_stride.h, topo.stem_pad.h, "stem(h)");
  long w = conv_dim(iw, topo.stem_kernel.w, topo.stem_stride.w, topo.stem_pad.w, "stem(w)");
  long d = conv_dim(id, topo.stem_kernel.d, topo.stem_stride.d, topo.stem_pad.d, "stem(d)");
  h = conv_dim(h, topo.pool_kernel.h, topo.pool_stride.h, topo.pool_pad.h, "pool(h)");
  w = conv_dim(w, topo.pool_kernel.w, topo.pool_stride.w, topo.pool_pad.w, "pool(w)");
  d = conv_dim(d, topo.pool_kernel.d, topo.pool_stride.d, topo.pool_pad.d, "pool(d)");
  for (int s = 0; s < 4; ++s) {
    // First block of the stage applies a 3x3x3 pad-1 conv at the stage stride.
    const Dims3 st = topo.stage_strides[static_cast<size_t>(s)];
    const std::string where = "stage" + std::to_string(s + 1);
    h = conv_dim(h, 3, st.h, 1, where + "(h)");
    w = conv_dim(w, 3, st.w, 1, where + "(w)");
    d = conv_dim(d, 3, st.d, 1, where + "(d)");
  }
  return {topo.stage_channels[3], h, w, d};
}

std::array<long, 4> ResNet3dEncoder::output_shape(long ih, long iw, long id) const {
  return encoder_output_shape(topo_, ih, iw, id);
}

Var ResNet3dEncoder::forward(Tape* tape, const Var& x, bool training, bool update_stats) {
  auto check = [](const Var& v, const char* stage) -> const Var& {
    if (!v.v.all_finite())
      throw NumericError(std::string("encoder: non-finite activation after ") + stage);
    return v;
  };
  Var h = stem_.forward(tape, x);
  h = stem_bn_.forward(tape, h, training, update_stats);
  h = relu(tape, h);
  h = check(pool_.forward(tape, h), "stem");
  for (size_t s = 0; s < stages_.size(); ++s) {
    for (auto& block : stages_[s]) h = block.forward(tape, h, training, update_stats);
    check(h, ("stage" + std::to_string(s + 1)).c_str());
  }
  return h;
}

void ResNet3dEncoder::collect(const std::string& prefix, NamedTensors& out) {
  stem_.collect(prefix + ".stem", out);
  stem_bn_.collect(prefix + ".stem_bn", out);
  for (size_t s = 0; s < stages_.size(); ++s)
    for (size_t b = 0; b < stages_[s].size(); ++b)
      stages_[s][b].collect(prefix + ".stage" + std::to_string(s + 1) + ".block" + std::to_string(b),
                            out);
}

}  // namespace mtcl
