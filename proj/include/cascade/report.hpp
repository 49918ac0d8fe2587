#pragma once

#include <string>
#include <vector>

#include <json.hpp>

namespace cascade {

constexpr const char* kArtifactVersion = "1.0.0";
constexpr const char* kReportSchemaVersion = "1";

struct Report {
    std::string command;
    nlohmann::json config_echo;
    nlohmann::json results;
    double elapsed_ms = 0.0;
    int exit_code = 0;  // 0 ok, 2 threshold violation

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["command"] = command;
        j["artifact_version"] = kArtifactVersion;
        j["schema_version"] = kReportSchemaVersion;
        j["config"] = config_echo;
        j["results"] = results;
        j["elapsed_ms"] = elapsed_ms;
        return j;
    }
};

// Minimal structural validator for the published report schema: supports
// type / required / properties / items / enum, which is all the schema uses.
inline void schema_check(const nlohmann::json& schema, const nlohmann::json& doc,
                         const std::string& path, std::vector<std::string>& out) {
    if (schema.contains("type")) {
        const std::string t = schema.at("type").get<std::string>();
        bool ok = (t == "object" && doc.is_object()) || (t == "array" && doc.is_array()) ||
                  (t == "string" && doc.is_string()) || (t == "number" && doc.is_number()) ||
                  (t == "integer" && doc.is_number_integer()) ||
                  (t == "boolean" && doc.is_boolean()) || (t == "null" && doc.is_null());
        if (!ok) {
            out.push_back(path + ": expected " + t);
            return;
        }
    }
    if (schema.contains("enum")) {
        bool found = false;
        for (const auto& v : schema.at("enum"))
            if (v == doc) found = true;
        if (!found) out.push_back(path + ": value not in enum");
    }
    if (schema.contains("required")) {
        for (const auto& key : schema.at("required")) {
            if (!doc.contains(key.get<std::string>()))
                out.push_back(path + ": missing required field " + key.get<std::string>());
        }
    }
    if (schema.contains("properties") && doc.is_object()) {
        for (const auto& [key, sub] : schema.at("properties").items()) {
            if (doc.contains(key)) schema_check(sub, doc.at(key), path + "/" + key, out);
        }
    }
    if (schema.contains("items") && doc.is_array()) {
        for (size_t i = 0; i < doc.size(); ++i)
            schema_check(schema.at("items"), doc[i], path + "[" + std::to_string(i) + "]", out);
    }
}

inline std::vector<std::string> schema_violations(const nlohmann::json& schema,
                                                  const nlohmann::json& doc) {
    std::vector<std::string> out;
    schema_check(schema, doc, "$", out);
    return out;
}

}  // namespace cascade
