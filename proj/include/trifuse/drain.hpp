#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "trifuse/jsonutil.hpp"

namespace trifuse {

inline constexpr const char* kWildcard = "<*>";

struct DrainConfig {
  int depth = 4;            // tree depth counting root and leaf
  double similarity = 0.4;  // minimum token-match ratio to join a template
  int max_children = 100;
};

struct LogTemplate {
  int template_id = 0;
  std::vector<std::string> tokens;  // kWildcard marks parameter slots
};

// Fixed-depth parse tree over whitespace tokens. The first tree level keys
// on token count, the next depth-2 levels on leading tokens; leaves hold
// template groups matched by token similarity. Tokens containing digits are
// replaced with the wildcard before descent.
class DrainParser {
 public:
  explicit DrainParser(DrainConfig config = {});
  DrainParser(const DrainParser& other);
  DrainParser& operator=(const DrainParser& other);
  DrainParser(DrainParser&&) noexcept = default;
  DrainParser& operator=(DrainParser&&) noexcept = default;

  // Matches or creates a template; mutates the tree for unseen shapes.
  int parse(const std::string& raw_text);

  const std::vector<LogTemplate>& templates() const { return templates_; }
  const LogTemplate& template_by_id(int id) const { return templates_.at(id); }
  const DrainConfig& config() const { return config_; }

  Json to_json() const;
  static DrainParser from_json(const Json& j);

  static std::vector<std::string> tokenize(const std::string& text);

 private:
  struct Node {
    std::map<std::string, std::unique_ptr<Node>> children;
    std::vector<int> template_ids;  // only populated at leaves
  };

  Node* descend(const std::vector<std::string>& tokens, bool create);
  static Json node_to_json(const Node& node);
  static std::unique_ptr<Node> node_from_json(const Json& j);
  static std::unique_ptr<Node> clone_node(const Node& node);

  DrainConfig config_;
  std::unique_ptr<Node> root_;
  std::vector<LogTemplate> templates_;
};

}  // namespace trifuse
