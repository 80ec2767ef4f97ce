#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>
#include <vector>

#include <json.hpp>

#include "fieldanno/session.hpp"

// JSON message envelope between the gateway and the operator UI.
//
//   frame:   {"type":"frame","frame_id":N,"image_b64":"...","detections":[
//              {"class_id":c,"cx":..,"cy":..,"w":..,"h":..,"conf":..}],
//             "latency_ms":..,"outcome":"detection"|"non_detection"|"error"}
//   command: {"type":"command","frame_id":N,"action":"save"|"skip"|"set_class"|
//             "adjust_box"|"delete_box"|"quit", ...params}
//              set_class:  "class_id"
//              adjust_box: "index","class_id"(optional),"cx","cy","w","h"
//              delete_box: "index"
//   ack:     {"type":"ack","frame_id":N,"action":"..."}
//   error:   {"type":"error","frame_id":N,"action":"...","message":"..."}
//   stats:   {"type":"stats", <SessionStats fields>, "active_class":c,
//             "end_of_stream":bool}
namespace fieldanno::wire {

class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string base64_encode(const std::uint8_t* data, std::size_t size) {
  static constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((size + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < size; i += 3) {
    const std::uint32_t v = (data[i] << 16) | (data[i + 1] << 8) | data[i + 2];
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += kAlphabet[v & 63];
  }
  if (i < size) {
    std::uint32_t v = data[i] << 16;
    if (i + 1 < size) v |= data[i + 1] << 8;
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += i + 1 < size ? kAlphabet[(v >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

inline std::vector<std::uint8_t> base64_decode(std::string_view text) {
  auto value = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  if (text.size() % 4 != 0) throw ProtocolError("base64 length not a multiple of 4");
  std::vector<std::uint8_t> out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    int v[4];
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      const char c = text[i + k];
      if (c == '=' && i + 4 == text.size() && k >= 2) {
        v[k] = 0;
        ++pad;
        continue;
      }
      if (pad) throw ProtocolError("invalid base64 padding");
      v[k] = value(c);
      if (v[k] < 0) throw ProtocolError("invalid base64 character");
    }
    const std::uint32_t bits = (v[0] << 18) | (v[1] << 12) | (v[2] << 6) | v[3];
    out.push_back(static_cast<std::uint8_t>(bits >> 16));
    if (pad < 2) out.push_back(static_cast<std::uint8_t>(bits >> 8));
    if (pad < 1) out.push_back(static_cast<std::uint8_t>(bits));
  }
  return out;
}

inline nlohmann::json detection_json(const Detection& d) {
  return {{"class_id", d.box.class_id}, {"cx", d.box.cx}, {"cy", d.box.cy},
          {"w", d.box.w},               {"h", d.box.h},   {"conf", d.confidence}};
}

inline std::string frame_message(const FrameRecord& rec, const std::vector<Detection>& boxes,
                                 const std::vector<std::uint8_t>& jpeg) {
  nlohmann::json dets = nlohmann::json::array();
  for (const auto& d : boxes) dets.push_back(detection_json(d));
  nlohmann::json j = {{"type", "frame"},
                      {"frame_id", rec.frame_id},
                      {"image_b64", base64_encode(jpeg.data(), jpeg.size())},
                      {"detections", std::move(dets)},
                      {"latency_ms", rec.inference_latency_ms},
                      {"outcome", to_string(rec.outcome)}};
  if (rec.outcome == Outcome::kError) j["error"] = rec.error;
  return j.dump();
}

inline std::string ack_message(FrameId frame_id, const std::string& action) {
  return nlohmann::json{{"type", "ack"}, {"frame_id", frame_id}, {"action", action}}.dump();
}

inline std::string error_message(std::optional<FrameId> frame_id, const std::string& action,
                                 const std::string& message) {
  nlohmann::json j = {{"type", "error"}, {"action", action}, {"message", message}};
  j["frame_id"] = frame_id ? nlohmann::json(*frame_id) : nlohmann::json(nullptr);
  return j.dump();
}

inline std::string stats_message(const SessionStats& st, ClassId active_class, bool end_of_stream) {
  auto j = to_json(st);
  j["type"] = "stats";
  j["active_class"] = active_class;
  j["end_of_stream"] = end_of_stream;
  return j.dump();
}

struct CommandMessage {
  FrameId frame_id = 0;
  OperatorCommand command;
};

inline CommandMessage parse_command(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError(std::string("malformed JSON: ") + e.what());
  }
  try {
    if (!j.is_object() || j.value("type", "") != "command") throw ProtocolError("expected a command message");
    if (!j.contains("frame_id") || !j["frame_id"].is_number_unsigned())
      throw ProtocolError("command must carry a non-negative integer frame_id");
    CommandMessage m;
    m.frame_id = j["frame_id"].get<FrameId>();
    const auto action = j.value("action", "");
    auto index = [&] {
      if (!j.contains("index") || !j["index"].is_number_unsigned())
        throw ProtocolError(action + " needs a non-negative integer 'index'");
      return j["index"].get<std::size_t>();
    };
    if (action == "save") m.command = cmd::Save{};
    else if (action == "skip") m.command = cmd::Skip{};
    else if (action == "quit") m.command = cmd::Quit{};
    else if (action == "delete_box") m.command = cmd::DeleteBox{index()};
    else if (action == "set_class") {
      if (!j.contains("class_id") || !j["class_id"].is_number_unsigned())
        throw ProtocolError("set_class needs a non-negative integer 'class_id'");
      m.command = cmd::SetClass{j["class_id"].get<ClassId>()};
    } else if (action == "adjust_box") {
      cmd::AdjustBox a;
      a.index = index();
      for (const char* key : {"cx", "cy", "w", "h"})
        if (!j.contains(key) || !j[key].is_number()) throw ProtocolError(std::string("adjust_box needs '") + key + "'");
      a.box.cx = j["cx"].get<double>();
      a.box.cy = j["cy"].get<double>();
      a.box.w = j["w"].get<double>();
      a.box.h = j["h"].get<double>();
      a.box.class_id = j.contains("class_id") ? j["class_id"].get<ClassId>()
                                              : std::numeric_limits<ClassId>::max();  // keep existing
      m.command = a;
    } else {
      throw ProtocolError("unknown action '" + action + "'");
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError(std::string("bad command field: ") + e.what());
  }
}

inline std::string command_message(FrameId frame_id, const OperatorCommand& command) {
  nlohmann::json j = {{"type", "command"}, {"frame_id", frame_id}, {"action", action_name(command)}};
  std::visit(
      [&](const auto& c) {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, cmd::SetClass>) j["class_id"] = c.class_id;
        if constexpr (std::is_same_v<T, cmd::DeleteBox>) j["index"] = c.index;
        if constexpr (std::is_same_v<T, cmd::AdjustBox>) {
          j["index"] = c.index;
          j["class_id"] = c.box.class_id;
          j["cx"] = c.box.cx;
          j["cy"] = c.box.cy;
          j["w"] = c.box.w;
          j["h"] = c.box.h;
        }
      },
      command);
  return j.dump();
}

}  // namespace fieldanno::wire
