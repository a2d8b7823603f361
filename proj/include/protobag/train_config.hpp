#pragma once

namespace protobag {

struct TrainConfig {
  int epochs_warm = 5;    // backbone frozen, prototypes + head learn
  int epochs_joint = 40;  // everything learns; push every push_period epochs
  int epochs_last = 60;   // head only, cross entropy + L1; the head needs a
                          // long tail to recalibrate after the final push
  int push_period = 10;
  int batch_size = 32;
  double lr_backbone = 1e-4;
  double lr_prototypes = 3e-3;
  double lr_head = 1e-3;
  // L2 ball the prototypes are clamped to after each step; 0 means 10*sqrt(D)
  double prototype_norm_radius = 0.0;
  bool class_weighted_sampling = false;
};

}  // namespace protobag
