#pragma once

#include <array>
#include <cstdint>
#include <string_view>

#include "quadfit/model.hpp"

namespace quadfit {

/// Procedural stand-in for a licensed quadruped template. Joints beyond the
/// 24-joint body extend the tail; fewer joints truncate the layout (skin
/// weights of removed joints fold onto their nearest kept ancestor).
struct ToyConfig {
  int n_joints = 35;
  int n_beta = 41;
  int ring_segments = 8;   // vertices around each limb tube
  int rings_per_tube = 4;  // cross-sections along each limb tube
  double shape_scale = 0.02;  // displacement magnitude per unit shape coefficient (m)
  std::uint64_t seed = 7;
};

ModelTemplate make_toy_template(const ToyConfig& config = {});

inline constexpr int kNumKeypoints = 26;

/// Keypoint layout of the toy template.
inline constexpr std::array<std::string_view, kNumKeypoints> kKeypointNames = {
    "nose",        "chin",        "eye_l",       "eye_r",       "ear_l",      "ear_r",
    "withers",     "tail_root",   "tail_mid",    "tail_tip",    "paw_fl",     "paw_fr",
    "paw_hl",      "paw_hr",      "wrist_fl",    "wrist_fr",    "hock_hl",    "hock_hr",
    "elbow_fl",    "elbow_fr",    "knee_hl",     "knee_hr",     "shoulder_l", "shoulder_r",
    "hip_l",       "hip_r"};

inline constexpr int kHeadKeypoint = 0;   // nose
inline constexpr int kTailKeypoint = 7;   // tail root
inline constexpr std::array<int, 5> kTorsoKeypoints = {6, 22, 23, 24, 25};

/// Species keywords carried by synthetic annotations and the family each one
/// belongs to.
inline constexpr std::array<std::string_view, 10> kSpecies = {
    "cat", "tiger", "lion", "cheetah", "dog", "wolf", "horse", "zebra", "cow", "hippo"};
inline constexpr std::array<std::string_view, 10> kSpeciesFamily = {
    "felidae", "felidae", "felidae", "felidae", "canidae",
    "canidae", "equidae", "equidae", "bovidae", "hippopotamidae"};

}  // namespace quadfit
