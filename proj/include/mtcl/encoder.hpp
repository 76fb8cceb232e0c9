#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "mtcl/nn.hpp"
#include "mtcl/types.hpp"

namespace mtcl {

// Residual encoder layout. The full preset is a 3-d ResNet34 whose depth axis
// is downsampled once by 3 at the pooling stage, taking 128x128x24 input to a
// 512x4x4x8 feature map. The tiny preset keeps the same stage structure with
// one block per stage and channel widths scaled down from the configured
// feature width, so desk-scale runs stay cheap.
struct EncoderTopology {
  long in_channels = 1;
  long stem_channels = 0;
  Dims3 stem_kernel, stem_stride, stem_pad;
  Dims3 pool_kernel, pool_stride, pool_pad;
  std::array<long, 4> stage_channels{};
  std::array<int, 4> stage_blocks{};
  std::array<Dims3, 4> stage_strides{};

  static EncoderTopology make(Scale scale, long feature_channels, long in_channels);
};

// {C, h, w, d} produced for the given input extents; pure shape math, no
// parameters are allocated. Throws ConfigError when a stage collapses.
std::array<long, 4> encoder_output_shape(const EncoderTopology& topo, long ih, long iw, long id);

class ResNet3dEncoder {
 public:
  ResNet3dEncoder(const EncoderTopology& topo, Rng& rng);

  // x is [N, in_channels, H, W, D]. Throws NumericError naming the stage if a
  // non-finite activation appears.
  Var forward(Tape* tape, const Var& x, bool training, bool update_stats = true);

  // {C, h, w, d} of the produced feature map for the given input extents.
  std::array<long, 4> output_shape(long ih, long iw, long id) const;

  void collect(const std::string& prefix, NamedTensors& out);

 private:
  struct Block {
    Block(long in_ch, long out_ch, Dims3 stride, Rng& rng);
    Var forward(Tape* tape, const Var& x, bool training, bool update_stats);
    void collect(const std::string& prefix, NamedTensors& out);

    Conv3d conv1;
    BatchNorm3d bn1;
    Conv3d conv2;
    BatchNorm3d bn2;
    std::unique_ptr<Conv3d> shortcut;
    std::unique_ptr<BatchNorm3d> shortcut_bn;
  };

  EncoderTopology topo_;
  Conv3d stem_;
  BatchNorm3d stem_bn_;
  MaxPool3d pool_;
  std::vector<std::vector<Block>> stages_;
};

}  // namespace mtcl
