#pragma once

// BlockWorld: a deterministic 2-D tabletop with a gripper, two colored blocks
// and two colored target zones. It generates text-annotated videos, serves as
// the ground-truth dynamics for planning, and provides a scripted expert.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "liv/errors.hpp"
#include "liv/rng.hpp"

namespace liv {

inline constexpr int kImageSide = 32;
inline constexpr int kImageChannels = 3;
inline constexpr int kImageBytes = kImageSide * kImageSide * kImageChannels;
inline constexpr int kActionDim = 3;
inline constexpr int kDefaultHorizon = 40;

inline constexpr double kMaxDisplacement = 0.08;
inline constexpr double kGraspRadius = 0.06;
inline constexpr double kSuccessRadius = 0.08;
inline constexpr double kReleaseRadius = 0.05;
inline constexpr double kExpertNoise = 0.01;

using Image = std::array<std::uint8_t, kImageBytes>;

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Vec2&, const Vec2&) = default;
};

inline double distance(Vec2 a, Vec2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

struct WorldState {
  Vec2 gripper{0.5, 0.95};
  std::vector<Vec2> blocks;  // index 0 = red, 1 = blue
  std::optional<std::size_t> attached;
  std::uint64_t step_count = 0;

  friend bool operator==(const WorldState&, const WorldState&) = default;
};

struct Action {
  double dx = 0.0;
  double dy = 0.0;
  double grip = 0.0;  // active iff >= 0.5

  bool grip_active() const { return grip >= 0.5; }
  friend bool operator==(const Action&, const Action&) = default;
};

enum class BlockColor { red = 0, blue = 1 };
enum class ZoneColor { green = 0, yellow = 1 };

inline constexpr std::string_view to_string(BlockColor c) { return c == BlockColor::red ? "red" : "blue"; }
inline constexpr std::string_view to_string(ZoneColor c) { return c == ZoneColor::green ? "green" : "yellow"; }

inline constexpr Vec2 zone_center(ZoneColor c) { return c == ZoneColor::green ? Vec2{0.2, 0.2} : Vec2{0.8, 0.2}; }

// ---------------------------------------------------------------------------
// Vocabulary and tokenizer.

inline const std::vector<std::string>& vocabulary() {
  static const std::vector<std::string> kVocabulary = {"push", "red", "blue", "block", "to", "green", "yellow", "zone"};
  return kVocabulary;
}

inline std::vector<int> tokenize(std::string_view text) {
  const auto& vocab = vocabulary();
  std::vector<int> ids;
  std::istringstream words{std::string(text)};
  std::string word;
  while (words >> word) {
    const auto it = std::find(vocab.begin(), vocab.end(), word);
    if (it == vocab.end()) throw UnknownTokenError(word);
    ids.push_back(static_cast<int>(it - vocab.begin()));
  }
  return ids;
}

struct TaskSpec {
  int task_id = 0;
  BlockColor block_color = BlockColor::red;
  ZoneColor zone_color = ZoneColor::green;
  std::string annotation;
  std::vector<int> token_ids;

  std::size_t block_index() const { return static_cast<std::size_t>(block_color); }
  Vec2 zone() const { return zone_center(zone_color); }
};

inline TaskSpec make_task(int task_id, BlockColor block, ZoneColor zone) {
  TaskSpec t{task_id, block, zone, {}, {}};
  t.annotation = "push " + std::string(to_string(block)) + " block to " + std::string(to_string(zone)) + " zone";
  t.token_ids = tokenize(t.annotation);
  return t;
}

// The four registered tasks: 2 blocks x 2 zones.
inline const std::vector<TaskSpec>& registered_tasks() {
  static const std::vector<TaskSpec> kTasks = {
      make_task(0, BlockColor::red, ZoneColor::green),
      make_task(1, BlockColor::red, ZoneColor::yellow),
      make_task(2, BlockColor::blue, ZoneColor::green),
      make_task(3, BlockColor::blue, ZoneColor::yellow),
  };
  return kTasks;
}

inline const TaskSpec& task_by_id(int task_id) {
  const auto& tasks = registered_tasks();
  if (task_id < 0 || task_id >= static_cast<int>(tasks.size())) {
    throw Error("unknown task id " + std::to_string(task_id));
  }
  return tasks[static_cast<std::size_t>(task_id)];
}

// ---------------------------------------------------------------------------
// Dynamics.

inline WorldState init_episode(Rng& rng, const TaskSpec& /*task*/) {
  constexpr int kMaxRejections = 1000;
  constexpr double kMinSeparation = 0.15;
  WorldState state;
  int rejections = 0;
  while (state.blocks.size() < 2) {
    const Vec2 candidate{rng.uniform(0.1, 0.9), rng.uniform(0.55, 0.9)};
    const bool clear = std::all_of(state.blocks.begin(), state.blocks.end(),
                                   [&](Vec2 b) { return distance(b, candidate) >= kMinSeparation; });
    if (clear) {
      state.blocks.push_back(candidate);
    } else if (++rejections > kMaxRejections) {
      throw GenerationError("block placement exceeded 1000 rejections");
    }
  }
  return state;
}

inline WorldState init_episode(std::uint64_t seed, const TaskSpec& task) {
  Rng rng(seed);
  return init_episode(rng, task);
}

inline double clamp_unit(double v) { return std::clamp(v, 0.0, 1.0); }
inline double clamp_displacement(double v) {
  return std::isnan(v) ? 0.0 : std::clamp(v, -kMaxDisplacement, kMaxDisplacement);
}

inline WorldState step(const WorldState& state, const Action& action) {
  WorldState next = state;
  next.gripper.x = clamp_unit(state.gripper.x + clamp_displacement(action.dx));
  next.gripper.y = clamp_unit(state.gripper.y + clamp_displacement(action.dy));
  if (action.grip_active()) {
    if (!next.attached) {
      std::optional<std::size_t> nearest;
      double best = kGraspRadius;
      for (std::size_t i = 0; i < next.blocks.size(); ++i) {
        const double d = distance(next.blocks[i], next.gripper);
        if (d <= best) {
          best = d;
          nearest = i;
        }
      }
      next.attached = nearest;
    }
  } else {
    next.attached.reset();
  }
  if (next.attached) next.blocks[*next.attached] = next.gripper;
  ++next.step_count;
  return next;
}

inline bool is_success(const WorldState& state, const TaskSpec& task) {
  const std::size_t b = task.block_index();
  if (b >= state.blocks.size()) return false;
  if (state.attached == b) return false;
  return distance(state.blocks[b], task.zone()) <= kSuccessRadius;
}

// ---------------------------------------------------------------------------
// Rendering.

struct Rgb {
  std::uint8_t r, g, b;
};

inline constexpr Rgb kGreenZone{0, 128, 0};
inline constexpr Rgb kYellowZone{128, 128, 0};
inline constexpr Rgb kRedBlock{255, 0, 0};
inline constexpr Rgb kBlueBlock{0, 0, 255};
inline constexpr Rgb kGripper{255, 255, 255};

struct Pixel {
  int col;
  int row;
};

inline Pixel world_to_pixel(Vec2 p) {
  return {static_cast<int>(std::lround(p.x * (kImageSide - 1))),
          static_cast<int>(std::lround((1.0 - p.y) * (kImageSide - 1)))};
}

inline void fill_patch(Image& image, int col0, int row0, int width, Rgb color) {
  for (int row = std::max(row0, 0); row < std::min(row0 + width, kImageSide); ++row) {
    for (int col = std::max(col0, 0); col < std::min(col0 + width, kImageSide); ++col) {
      const std::size_t i = static_cast<std::size_t>((row * kImageSide + col) * kImageChannels);
      image[i] = color.r;
      image[i + 1] = color.g;
      image[i + 2] = color.b;
    }
  }
}

// Zones are 7x7 and blocks 3x3 centered on their pixel; the 2x2 gripper
// covers its pixel and the pixels to the right and below.
inline Image render(const WorldState& state) {
  Image image{};
  const Pixel green = world_to_pixel(zone_center(ZoneColor::green));
  const Pixel yellow = world_to_pixel(zone_center(ZoneColor::yellow));
  fill_patch(image, green.col - 3, green.row - 3, 7, kGreenZone);
  fill_patch(image, yellow.col - 3, yellow.row - 3, 7, kYellowZone);
  for (std::size_t i = 0; i < state.blocks.size(); ++i) {
    const Pixel p = world_to_pixel(state.blocks[i]);
    fill_patch(image, p.col - 1, p.row - 1, 3, i == 0 ? kRedBlock : kBlueBlock);
  }
  const Pixel g = world_to_pixel(state.gripper);
  fill_patch(image, g.col, g.row, 2, kGripper);
  return image;
}

// ---------------------------------------------------------------------------
// Scripted expert.

inline Vec2 clamped_toward(Vec2 from, Vec2 to, Vec2 noise) {
  return {clamp_displacement(to.x - from.x + noise.x), clamp_displacement(to.y - from.y + noise.y)};
}

// Reach and grasp, carry and release, then return the open gripper to its
// home position once the block rests in the zone.
inline Action expert_action(const WorldState& state, const TaskSpec& task, Rng& rng) {
  const Vec2 noise{rng.uniform(-kExpertNoise, kExpertNoise), rng.uniform(-kExpertNoise, kExpertNoise)};
  const std::size_t b = task.block_index();
  const Vec2 block = state.blocks[b];
  if (is_success(state, task)) {
    const Vec2 d = clamped_toward(state.gripper, WorldState{}.gripper, noise);
    return {d.x, d.y, 0.0};
  }
  if (state.attached != b) {
    const Vec2 d = clamped_toward(state.gripper, block, noise);
    const bool near = distance(state.gripper, block) <= kGraspRadius;
    return {d.x, d.y, near ? 1.0 : 0.0};
  }
  const Vec2 zone = task.zone();
  const Vec2 d = clamped_toward(state.gripper, zone, noise);
  const bool arrived = distance(state.gripper, zone) <= kReleaseRadius;
  return {d.x, d.y, arrived ? 0.0 : 1.0};
}

inline Action random_action(Rng& rng) {
  const double dx = rng.uniform(-kMaxDisplacement, kMaxDisplacement);
  const double dy = rng.uniform(-kMaxDisplacement, kMaxDisplacement);
  return {dx, dy, rng.uniform()};
}

// ---------------------------------------------------------------------------
// Annotated videos and datasets.

struct AnnotatedVideo {
  std::vector<Image> frames;
  std::optional<std::vector<Action>> actions;
  std::vector<int> token_ids;
  std::optional<int> task_id;

  int horizon() const { return static_cast<int>(frames.size()); }
  bool annotated() const { return !token_ids.empty(); }
  const Image& goal() const { return frames.back(); }
};

// Every frame replaced by the final (goal) frame; actions dropped.
inline AnnotatedVideo degenerate_video(const AnnotatedVideo& video) {
  AnnotatedVideo out;
  out.frames.assign(video.frames.size(), video.frames.back());
  out.token_ids = video.token_ids;
  out.task_id = video.task_id;
  return out;
}

enum class DataPolicy { expert, random };

inline std::string_view to_string(DataPolicy p) { return p == DataPolicy::expert ? "expert" : "random"; }

struct DatasetConfig {
  int episodes = 1;
  DataPolicy policy = DataPolicy::expert;
  int horizon = kDefaultHorizon;
  std::uint64_t seed = 0;
  // Tasks cycled through in expert mode (episode i uses task_ids[i % n]).
  std::vector<int> task_ids = {0, 1, 2, 3};
};

struct Dataset {
  std::vector<AnnotatedVideo> videos;
  std::vector<std::string> vocabulary;
  std::vector<TaskSpec> tasks;
  int horizon = kDefaultHorizon;
  std::uint64_t seed = 0;
  DataPolicy policy = DataPolicy::expert;

  std::size_t labeled_count() const {
    return static_cast<std::size_t>(
        std::count_if(videos.begin(), videos.end(), [](const AnnotatedVideo& v) { return v.annotated(); }));
  }
};

// Per-episode PRNG stream: seed xor episode index.
inline Rng episode_stream(std::uint64_t seed, std::uint64_t episode) { return Rng(seed ^ episode); }

inline AnnotatedVideo generate_episode(const DatasetConfig& config, std::uint64_t episode) {
  Rng rng = episode_stream(config.seed, episode);
  const auto& tasks = registered_tasks();
  const TaskSpec& task = task_by_id(config.task_ids[episode % config.task_ids.size()]);
  WorldState state = init_episode(rng, task);

  AnnotatedVideo video;
  video.actions.emplace();
  video.frames.reserve(static_cast<std::size_t>(config.horizon));
  video.frames.push_back(render(state));
  for (int t = 1; t < config.horizon; ++t) {
    Action a = config.policy == DataPolicy::expert ? expert_action(state, task, rng) : random_action(rng);
    // Stored actions are float32; the world steps with exactly what is stored.
    a = {static_cast<float>(a.dx), static_cast<float>(a.dy), static_cast<float>(a.grip)};
    state = step(state, a);
    video.actions->push_back(a);
    video.frames.push_back(render(state));
  }

  if (config.policy == DataPolicy::expert) {
    video.token_ids = task.token_ids;
    video.task_id = task.task_id;
  } else {
    // Concatenation of every task instruction satisfied at the final state.
    std::string annotation;
    std::vector<int> satisfied;
    for (const auto& candidate : tasks) {
      if (!is_success(state, candidate)) continue;
      if (!annotation.empty()) annotation += ' ';
      annotation += candidate.annotation;
      satisfied.push_back(candidate.task_id);
    }
    video.token_ids = tokenize(annotation);
    if (satisfied.size() == 1) video.task_id = satisfied.front();
  }
  return video;
}

inline Dataset generate_dataset(const DatasetConfig& config) {
  if (config.episodes < 1) throw GenerationError("episodes must be >= 1");
  if (config.horizon < 2) throw GenerationError("horizon must be >= 2");
  if (config.task_ids.empty()) throw GenerationError("task list is empty");
  Dataset data;
  data.vocabulary = vocabulary();
  data.tasks = registered_tasks();
  data.horizon = config.horizon;
  data.seed = config.seed;
  data.policy = config.policy;
  data.videos.reserve(static_cast<std::size_t>(config.episodes));
  for (int i = 0; i < config.episodes; ++i) data.videos.push_back(generate_episode(config, static_cast<std::uint64_t>(i)));
  return data;
}

}  // namespace liv
