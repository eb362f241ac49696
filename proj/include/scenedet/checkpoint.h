#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "scenedet/autodiff.h"
#include "scenedet/tensor.h"

namespace scenedet::ckpt {

struct NamedTensor {
    std::string name;
    Tensor value;
};

// Snapshot of a trained model: a small text manifest, the canonical config
// text it was trained with, and every parameter tensor. Saving the same
// snapshot twice produces byte-identical files.
struct Checkpoint {
    int epoch = 0;
    double best_map25 = 0.0;
    std::uint64_t config_hash = 0;  // FNV-1a of config_text
    std::string config_text;        // "key = value" lines, newline-terminated
    std::vector<NamedTensor> tensors;
};

// Collects all parameters of the store in creation order; the hash is
// computed from the config text.
Checkpoint snapshot(const ad::ParamStore& store, const std::string& config_text,
                    int epoch, double best_map25);

// Copies checkpoint tensors into the store. Names, order and shapes must
// match exactly; a mismatch raises ConfigError naming the first offender.
void restore(const Checkpoint& ckpt, ad::ParamStore& store);

// Text header and manifest, then per tensor one "name rows cols" line
// followed by the raw row-major doubles.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace scenedet::ckpt
