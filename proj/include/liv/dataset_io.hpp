#pragma once

// On-disk dataset layout:
//   meta.json                     dataset-level description
//   index.json                    one entry per episode
//   ep_<6 digits>.frames.u8       h*32*32*3 bytes, frame-major
//   ep_<6 digits>.actions.f32le   (h-1)*3 little-endian float32, or absent

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "liv/io.hpp"
#include "liv/worldgen.hpp"

namespace liv {

inline constexpr int kDatasetFormatVersion = 1;

inline std::string episode_stem(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "ep_%06zu", index);
  return buf;
}

inline std::string vocabulary_hash(const std::vector<std::string>& vocab) {
  Sha256 h;
  for (const auto& word : vocab) h.update(word).update("\n");
  return h.hex_digest();
}

inline Json tasks_to_json(const std::vector<TaskSpec>& tasks) {
  Json arr = Json::array();
  for (const auto& t : tasks) arr.push_back({{"task_id", t.task_id}, {"annotation", t.annotation}, {"token_ids", t.token_ids}});
  return arr;
}

inline Json dataset_meta(const Dataset& data) {
  return {{"version", kDatasetFormatVersion},
          {"image_dims", {kImageSide, kImageSide, kImageChannels}},
          {"vocabulary", data.vocabulary},
          {"tasks", tasks_to_json(data.tasks)},
          {"episodes", data.videos.size()},
          {"labeled_episodes", data.labeled_count()},
          {"horizon", data.horizon},
          {"action_dim", kActionDim},
          {"seed", data.seed},
          {"policy", std::string(to_string(data.policy))}};
}

inline std::vector<std::uint8_t> encode_actions(const std::vector<Action>& actions) {
  std::vector<std::uint8_t> bytes;
  bytes.reserve(actions.size() * kActionDim * 4);
  for (const auto& a : actions) {
    append_f32le(bytes, static_cast<float>(a.dx));
    append_f32le(bytes, static_cast<float>(a.dy));
    append_f32le(bytes, static_cast<float>(a.grip));
  }
  return bytes;
}

inline void save_dataset(const Dataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  Json index = Json::array();
  for (std::size_t i = 0; i < data.videos.size(); ++i) {
    const auto& video = data.videos[i];
    const std::string stem = episode_stem(i);
    std::vector<std::uint8_t> frames;
    frames.reserve(video.frames.size() * kImageBytes);
    for (const auto& f : video.frames) frames.insert(frames.end(), f.begin(), f.end());
    write_file(dir / (stem + ".frames.u8"), frames);

    Json entry = {{"frames_file", stem + ".frames.u8"},
                  {"horizon", video.horizon()},
                  {"token_ids", video.token_ids},
                  {"actions_file", nullptr},
                  {"task_id", nullptr}};
    if (video.actions) {
      write_file(dir / (stem + ".actions.f32le"), encode_actions(*video.actions));
      entry["actions_file"] = stem + ".actions.f32le";
    }
    if (video.task_id) entry["task_id"] = *video.task_id;
    index.push_back(std::move(entry));
  }
  write_json_file(dir / "meta.json", dataset_meta(data));
  write_json_file(dir / "index.json", index);
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  const Json meta = parse_json_file(dir / "meta.json");
  const Json index = parse_json_file(dir / "index.json");
  Dataset data;
  try {
    if (meta.at("version").get<int>() != kDatasetFormatVersion) throw FormatError("unsupported dataset version");
    const auto dims = meta.at("image_dims").get<std::vector<int>>();
    if (dims != std::vector<int>{kImageSide, kImageSide, kImageChannels}) throw FormatError("unsupported image dims");
    data.vocabulary = meta.at("vocabulary").get<std::vector<std::string>>();
    for (const auto& t : meta.at("tasks")) data.tasks.push_back(task_by_id(t.at("task_id").get<int>()));
    data.horizon = meta.at("horizon").get<int>();
    data.seed = meta.at("seed").get<std::uint64_t>();
    data.policy = meta.at("policy").get<std::string>() == "random" ? DataPolicy::random : DataPolicy::expert;

    for (const auto& entry : index) {
      AnnotatedVideo video;
      const int h = entry.at("horizon").get<int>();
      const auto frames = read_file(dir / entry.at("frames_file").get<std::string>());
      if (h < 1 || frames.size() != static_cast<std::size_t>(h) * kImageBytes) {
        throw FormatError("frame file size does not match horizon for " + entry.at("frames_file").get<std::string>());
      }
      video.frames.resize(static_cast<std::size_t>(h));
      for (int f = 0; f < h; ++f) {
        std::copy_n(frames.begin() + static_cast<std::ptrdiff_t>(f) * kImageBytes, kImageBytes, video.frames[f].begin());
      }
      if (!entry.at("actions_file").is_null()) {
        const auto bytes = read_file(dir / entry.at("actions_file").get<std::string>());
        const std::size_t n = static_cast<std::size_t>(h - 1);
        if (bytes.size() != n * kActionDim * 4) throw FormatError("action file size does not match horizon");
        video.actions.emplace(n);
        for (std::size_t a = 0; a < n; ++a) {
          const std::uint8_t* p = bytes.data() + a * kActionDim * 4;
          (*video.actions)[a] = {read_f32le(p), read_f32le(p + 4), read_f32le(p + 8)};
        }
      }
      video.token_ids = entry.at("token_ids").get<std::vector<int>>();
      for (int id : video.token_ids) {
        if (id < 0 || id >= static_cast<int>(data.vocabulary.size())) throw FormatError("token id out of vocabulary");
      }
      if (!entry.at("task_id").is_null()) video.task_id = entry.at("task_id").get<int>();
      data.videos.push_back(std::move(video));
    }
  } catch (const Json::exception& e) {
    throw FormatError("malformed dataset metadata in " + dir.string() + ": " + e.what());
  }
  return data;
}

// Content hash of an in-memory dataset (frames, actions, annotations and
// vocabulary). Equal for a dataset and its save/load round trip.
inline std::string dataset_fingerprint(const Dataset& data) {
  Sha256 h;
  h.update(canonical_json(dataset_meta(data)));
  for (const auto& video : data.videos) {
    for (const auto& f : video.frames) h.update(f);
    if (video.actions) h.update(encode_actions(*video.actions));
    h.update(canonical_json(Json(video.token_ids)));
    h.update(video.task_id ? std::to_string(*video.task_id) : std::string("-"));
  }
  return h.hex_digest();
}

}  // namespace liv
