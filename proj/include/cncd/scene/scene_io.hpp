#pragma once

// Scene document schema (JSON):
// {
//   "format": "cncd.scene/1",
//   "spec_hash": "<16 hex digits>",
//   "seed": <u64>,
//   "split": "train" | "test",
//   "points": [
//     {"attrs": [d reals], "base_label": int | null, "novel_label_hidden": int | null,
//      "confounder_tag": 0 | 1, "split": "train" | "test"}, ...
//   ]
// }

#include <filesystem>
#include <string>

#include "cncd/io/json_io.hpp"
#include "cncd/scene/scene.hpp"

namespace cncd {

inline constexpr const char* kSceneFormat = "cncd.scene/1";

inline Split parse_split(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "test") return Split::Test;
    throw DataError("unknown split '" + s + "'");
}

inline io::json scene_to_json(const PointScene& scene) {
    io::json points = io::json::array();
    for (std::size_t i = 0; i < scene.size(); ++i) {
        auto row = scene.attrs.row(i);
        io::json p;
        p["attrs"] = std::vector<double>(row.begin(), row.end());
        p["base_label"] = scene.base_labels[i] == kUnlabeled ? io::json(nullptr) : io::json(scene.base_labels[i]);
        p["novel_label_hidden"] =
            scene.novel_labels[i] == kUnlabeled ? io::json(nullptr) : io::json(scene.novel_labels[i]);
        p["confounder_tag"] = scene.confounder_tags[i];
        p["split"] = to_string(scene.split);
        points.push_back(std::move(p));
    }
    return io::json{{"format", kSceneFormat},
                    {"spec_hash", scene.spec_hash},
                    {"seed", scene.seed},
                    {"split", to_string(scene.split)},
                    {"points", std::move(points)}};
}

inline PointScene scene_from_json(const io::json& doc) {
    try {
        if (doc.at("format").get<std::string>() != kSceneFormat) throw DataError("scene: unsupported format");
        PointScene scene;
        scene.spec_hash = doc.at("spec_hash").get<std::string>();
        scene.seed = doc.at("seed").get<std::uint64_t>();
        scene.split = parse_split(doc.at("split").get<std::string>());
        const auto& points = doc.at("points");
        const std::size_t P = points.size();
        const std::size_t d = P ? points.at(0).at("attrs").size() : 0;
        scene.attrs = Matrix(P, d);
        scene.base_labels.assign(P, kUnlabeled);
        scene.novel_labels.assign(P, kUnlabeled);
        scene.confounder_tags.assign(P, 0);
        for (std::size_t i = 0; i < P; ++i) {
            const auto& p = points[i];
            auto attrs = p.at("attrs").get<std::vector<double>>();
            if (attrs.size() != d) throw DataError("scene: point " + std::to_string(i) + " has wrong attr count");
            std::copy(attrs.begin(), attrs.end(), scene.attrs.row(i).begin());
            if (!p.at("base_label").is_null()) scene.base_labels[i] = p.at("base_label").get<int>();
            if (!p.at("novel_label_hidden").is_null()) scene.novel_labels[i] = p.at("novel_label_hidden").get<int>();
            const int tag = p.at("confounder_tag").get<int>();
            if (tag != 0 && tag != 1) throw DataError("scene: confounder_tag must be 0 or 1");
            scene.confounder_tags[i] = tag;
            if ((scene.base_labels[i] == kUnlabeled) == (scene.novel_labels[i] == kUnlabeled))
                throw DataError("scene: point " + std::to_string(i) + " must be exactly one of base or novel");
        }
        return scene;
    } catch (const io::json::exception& e) {
        throw DataError(std::string("scene: ") + e.what());
    }
}

inline void save_scene(const PointScene& scene, const std::filesystem::path& path) {
    io::write_text_file(path, scene_to_json(scene).dump());
}

inline PointScene load_scene(const std::filesystem::path& path) {
    return scene_from_json(io::parse_json(io::read_text_file(path)));
}

}  // namespace cncd
