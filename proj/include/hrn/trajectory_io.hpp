#pragma once

#include <string>

#include "hrn/sim.hpp"

namespace hrn::io {

// Trajectory container: magic "HRNT", u32 version, u32 header length, JSON
// header, then float32 little-endian frames (positions, velocities, forces;
// N_P x 3 each, frames contiguous). Read errors carry the byte offset.
inline constexpr char kTrajectoryMagic[4] = {'H', 'R', 'N', 'T'};
inline constexpr std::uint32_t kTrajectoryVersion = 1;

void write_trajectory(const std::string& path, const sim::Trajectory& traj);
sim::Trajectory read_trajectory(const std::string& path);

// Rebuilds derived hierarchy fields (children, leaves CSR, roots, node
// states) after loading levels/parents/kinship from a header.
void finalize_hierarchy(HierarchyGraph& h, const SceneGraph& scene);

}  // namespace hrn::io
