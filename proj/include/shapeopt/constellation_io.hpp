#pragma once

// Constellation exchange format (JSON):
//
//   {
//     "format": "shapeopt-constellation", "version": 1,
//     "metadata": {"name": str, "base": str, "lambda": num?, "n_ball": int?,
//                  "point_scale": [num]?},
//     "points": [[re_x, im_x, re_y, im_y], ...],
//     "pmf": [p, ...]
//   }
//
// Doubles are written in shortest round-trip form, so write/read is lossless.

#include <cstddef>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"

#include "shapeopt/constellation.hpp"
#include "shapeopt/errors.hpp"

namespace shapeopt {

inline constexpr const char* kConstellationFormat = "shapeopt-constellation";

inline nlohmann::json to_json(const Constellation4D& c) {
  nlohmann::json meta = {{"name", c.meta().name}, {"base", c.meta().base}};
  if (c.meta().lambda) meta["lambda"] = *c.meta().lambda;
  if (c.meta().n_ball) meta["n_ball"] = *c.meta().n_ball;
  if (!c.meta().point_scale.empty()) meta["point_scale"] = c.meta().point_scale;
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : c.points()) pts.push_back({p[0], p[1], p[2], p[3]});
  return {{"format", kConstellationFormat},
          {"version", 1},
          {"metadata", std::move(meta)},
          {"points", std::move(pts)},
          {"pmf", c.pmf()}};
}

namespace detail {

inline std::size_t line_of_offset(const std::string& text, std::size_t offset) {
  offset = std::min(offset, text.size());
  std::size_t line = 1;
  for (std::size_t i = 0; i < offset; ++i)
    if (text[i] == '\n') ++line;
  return line;
}

// Best-effort line lookup for schema errors: first line mentioning the key.
inline std::size_t line_of_key(const std::string& text, const std::string& key) {
  const auto pos = text.find("\"" + key + "\"");
  return pos == std::string::npos ? 1 : line_of_offset(text, pos);
}

}  // namespace detail

inline Constellation4D constellation_from_json_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw parse_error(e.what(), detail::line_of_offset(text, e.byte > 0 ? e.byte - 1 : 0));
  }
  auto need = [&](const nlohmann::json& obj, const char* key) -> const nlohmann::json& {
    if (!obj.is_object() || !obj.contains(key))
      throw parse_error(std::string("missing field \"") + key + "\"", detail::line_of_key(text, key));
    return obj.at(key);
  };
  try {
    if (j.contains("format") && j.at("format") != kConstellationFormat)
      throw parse_error("unknown format tag", detail::line_of_key(text, "format"));
    const auto& jp = need(j, "points");
    const auto& jw = need(j, "pmf");
    std::vector<Point4> pts;
    pts.reserve(jp.size());
    for (const auto& row : jp) {
      if (!row.is_array() || row.size() != 4)
        throw parse_error("point " + std::to_string(pts.size()) + " is not a 4-vector",
                          detail::line_of_key(text, "points"));
      pts.push_back({row[0].get<double>(), row[1].get<double>(), row[2].get<double>(),
                     row[3].get<double>()});
    }
    auto pmf = jw.get<std::vector<double>>();
    ConstellationMeta meta;
    if (j.contains("metadata")) {
      const auto& m = j.at("metadata");
      meta.name = m.value("name", "");
      meta.base = m.value("base", "");
      if (m.contains("lambda") && !m.at("lambda").is_null()) meta.lambda = m.at("lambda").get<double>();
      if (m.contains("n_ball") && !m.at("n_ball").is_null()) meta.n_ball = m.at("n_ball").get<std::size_t>();
      if (m.contains("point_scale")) meta.point_scale = m.at("point_scale").get<std::vector<double>>();
    }
    Constellation4D c(std::move(pts), std::move(pmf), std::move(meta));
    if (!c.points_distinct()) throw parse_error("constellation has coincident points", 1);
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw parse_error(e.what(), 1);
  } catch (const invalid_argument& e) {
    throw parse_error(e.what(), 1);
  }
}

inline void write_constellation(const Constellation4D& c, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << to_json(c).dump(1) << '\n';
}

inline Constellation4D read_constellation(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return constellation_from_json_text(ss.str());
}

}  // namespace shapeopt
