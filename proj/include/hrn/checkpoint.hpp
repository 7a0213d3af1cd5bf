#pragma once

#include <cstdint>
#include <string>

#include "hrn/adam.hpp"
#include "hrn/loss.hpp"
#include "hrn/model.hpp"

namespace hrn::io {

// Checkpoint container: magic "HRNC", u32 version, u32 manifest length, JSON
// manifest (named shapes with offsets, model/loss config, optimizer step,
// normalization stats, RNG seed), then one flat little-endian float32 array.
inline constexpr char kCheckpointMagic[4] = {'H', 'R', 'N', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    model::HrnModel model;
    train::NormStats stats;
    train::LossConfig loss;
    AdamState adam;  // moments included for resume
    std::uint64_t seed = 0;
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace hrn::io
