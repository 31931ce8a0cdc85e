#pragma once

#include <cstddef>

#include "edgeguard/network.hpp"

// Architectures of the three cascade stages. Channel widths are parameters so
// that full-size weights and the small toy-trained ones share one definition.
//
// Every stage exposes the heads "face_score" (softmax over {non-face, face}),
// "box" (dx1, dy1, dx2, dy2) and "landmarks" (x0, y0, ..., x4, y4), all
// normalized by the input box size.
namespace edgeguard {

inline constexpr std::size_t kPnetInput = 12;
inline constexpr std::size_t kRnetInput = 24;
inline constexpr std::size_t kOnetInput = 48;

// Proposal net: three 3x3 convs around one 2x2 pool, fully convolutional.
// The last conv width is the per-position feature size.
struct PnetWidths {
  std::size_t conv1 = 10;
  std::size_t conv2 = 16;
  std::size_t conv3 = 32;
};

struct RnetWidths {
  std::size_t conv1 = 28;
  std::size_t conv2 = 48;
  std::size_t conv3 = 64;
  std::size_t fc = 128;
};

struct OnetWidths {
  std::size_t conv1 = 32;
  std::size_t conv2 = 64;
  std::size_t conv3 = 64;
  std::size_t conv4 = 128;
  std::size_t fc = 256;
};

struct CascadeWidths {
  PnetWidths pnet;
  RnetWidths rnet;
  OnetWidths onet;

  static CascadeWidths reference() { return {}; }
  // Narrow refinement stages used for synthetic-data training.
  static CascadeWidths toy();
  // Reads the widths back from stored parameter shapes.
  static CascadeWidths from_weights(const WeightStore& weights);
};

NetworkDef make_pnet(const PnetWidths& w = {});
NetworkDef make_rnet(const RnetWidths& w = {});
NetworkDef make_onet(const OnetWidths& w = {});

struct CascadeNets {
  NetworkDef pnet;
  NetworkDef rnet;
  NetworkDef onet;

  static CascadeNets build(const CascadeWidths& widths);
  // Builds from the widths found in `weights` and validates all three stages.
  static CascadeNets from_weights(const WeightStore& weights);
};

}  // namespace edgeguard
