#include "edgeguard/cascade_nets.hpp"

#include "edgeguard/errors.hpp"

namespace edgeguard {

namespace {

void add_heads(NetworkDef& net, const std::string& trunk, bool spatial, std::size_t features) {
  if (spatial) {
    net.conv("score_logits", {2, features, 1, 1, 1, 0}, trunk)
        .softmax("score", 0)
        .conv("box", {4, features, 1, 1, 1, 0}, trunk)
        .conv("landmarks", {10, features, 1, 1, 1, 0}, trunk);
  } else {
    net.fc("score_logits", features, 2, trunk)
        .softmax("score", 0)
        .fc("box", features, 4, trunk)
        .fc("landmarks", features, 10, trunk);
  }
  net.head("face_score", "score").head("box", "box").head("landmarks", "landmarks");
}

std::size_t out_channels(const WeightStore& weights, const std::string& name) {
  const Tensor& t = weights.get(name);
  if (t.rank() < 1) throw ConfigError("weight '" + name + "' has no output dimension");
  return t.dim(0);
}

}  // namespace

CascadeWidths CascadeWidths::toy() {
  CascadeWidths w;
  w.rnet = {8, 16, 32, 64};
  w.onet = {8, 16, 32, 32, 64};
  return w;
}

CascadeWidths CascadeWidths::from_weights(const WeightStore& weights) {
  CascadeWidths w;
  w.pnet = {out_channels(weights, "pnet.conv1.weight"), out_channels(weights, "pnet.conv2.weight"),
            out_channels(weights, "pnet.conv3.weight")};
  w.rnet = {out_channels(weights, "rnet.conv1.weight"), out_channels(weights, "rnet.conv2.weight"),
            out_channels(weights, "rnet.conv3.weight"), out_channels(weights, "rnet.fc.weight")};
  w.onet = {out_channels(weights, "onet.conv1.weight"), out_channels(weights, "onet.conv2.weight"),
            out_channels(weights, "onet.conv3.weight"), out_channels(weights, "onet.conv4.weight"),
            out_channels(weights, "onet.fc.weight")};
  return w;
}

NetworkDef make_pnet(const PnetWidths& w) {
  NetworkDef net;
  net.name = "pnet";
  net.input_shape = {3, kPnetInput, kPnetInput};
  net.fully_convolutional = true;
  net.conv("conv1", {w.conv1, 3, 3, 3, 1, 0})
      .prelu("prelu1", w.conv1)
      .maxpool("pool1", 2, 2)
      .conv("conv2", {w.conv2, w.conv1, 3, 3, 1, 0})
      .prelu("prelu2", w.conv2)
      .conv("conv3", {w.conv3, w.conv2, 3, 3, 1, 0})
      .prelu("prelu3", w.conv3);
  add_heads(net, "prelu3", true, w.conv3);
  return net;
}

NetworkDef make_rnet(const RnetWidths& w) {
  NetworkDef net;
  net.name = "rnet";
  net.input_shape = {3, kRnetInput, kRnetInput};
  // 24 -> 22 -> 11 -> 9 -> 4 -> 3
  net.conv("conv1", {w.conv1, 3, 3, 3, 1, 0})
      .prelu("prelu1", w.conv1)
      .maxpool("pool1", 3, 2)
      .conv("conv2", {w.conv2, w.conv1, 3, 3, 1, 0})
      .prelu("prelu2", w.conv2)
      .maxpool("pool2", 3, 2)
      .conv("conv3", {w.conv3, w.conv2, 2, 2, 1, 0})
      .prelu("prelu3", w.conv3)
      .fc("fc", w.conv3 * 3 * 3, w.fc)
      .prelu("prelu4", w.fc);
  add_heads(net, "prelu4", false, w.fc);
  return net;
}

NetworkDef make_onet(const OnetWidths& w) {
  NetworkDef net;
  net.name = "onet";
  net.input_shape = {3, kOnetInput, kOnetInput};
  // 48 -> 46 -> 23 -> 21 -> 10 -> 8 -> 4 -> 3
  net.conv("conv1", {w.conv1, 3, 3, 3, 1, 0})
      .prelu("prelu1", w.conv1)
      .maxpool("pool1", 3, 2)
      .conv("conv2", {w.conv2, w.conv1, 3, 3, 1, 0})
      .prelu("prelu2", w.conv2)
      .maxpool("pool2", 3, 2)
      .conv("conv3", {w.conv3, w.conv2, 3, 3, 1, 0})
      .prelu("prelu3", w.conv3)
      .maxpool("pool3", 2, 2)
      .conv("conv4", {w.conv4, w.conv3, 2, 2, 1, 0})
      .prelu("prelu4", w.conv4)
      .fc("fc", w.conv4 * 3 * 3, w.fc)
      .prelu("prelu5", w.fc);
  add_heads(net, "prelu5", false, w.fc);
  return net;
}

CascadeNets CascadeNets::build(const CascadeWidths& widths) {
  return {make_pnet(widths.pnet), make_rnet(widths.rnet), make_onet(widths.onet)};
}

CascadeNets CascadeNets::from_weights(const WeightStore& weights) {
  CascadeNets nets = build(CascadeWidths::from_weights(weights));
  nets.pnet.validate(weights);
  nets.rnet.validate(weights);
  nets.onet.validate(weights);
  return nets;
}

}  // namespace edgeguard
