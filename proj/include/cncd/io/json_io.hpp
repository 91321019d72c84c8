#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "cncd/core/errors.hpp"
#include "cncd/core/matrix.hpp"

namespace cncd::io {

using json = nlohmann::json;

inline std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(path.string(), "cannot open for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad()) throw IoError(path.string(), "read failed");
    return ss.str();
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
        if (ec) throw IoError(path.parent_path().string(), "cannot create directory: " + ec.message());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(path.string(), "cannot open for writing");
    out << text;
    out.flush();
    if (!out) throw IoError(path.string(), "write failed");
}

/// Parses a document; syntax errors become ParseError with the byte offset.
inline json parse_json(const std::string& text) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(e.what(), e.byte);
    }
}

inline json to_json(const Matrix& m) {
    return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", m.data()}};
}

inline Matrix matrix_from_json(const json& j) {
    try {
        const auto rows = j.at("rows").get<std::size_t>();
        const auto cols = j.at("cols").get<std::size_t>();
        auto data = j.at("data").get<std::vector<double>>();
        if (data.size() != rows * cols) throw DataError("matrix: data length does not match shape");
        return Matrix(rows, cols, std::move(data));
    } catch (const json::exception& e) {
        throw DataError(std::string("matrix: ") + e.what());
    }
}

}  // namespace cncd::io
