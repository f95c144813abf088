#include "trifuse/drain.hpp"

#include <algorithm>
#include <cctype>

namespace trifuse {

namespace {

bool has_digit(const std::string& token) {
  return std::any_of(token.begin(), token.end(),
                     [](unsigned char c) { return std::isdigit(c) != 0; });
}

// Numeric tokens become wildcards up front. If that would wipe out every
// token the first one is kept literal, so a template always retains at
// least one anchor.
std::vector<std::string> preprocess(std::vector<std::string> tokens) {
  bool all_numeric = std::all_of(tokens.begin(), tokens.end(),
                                 [](const std::string& t) { return has_digit(t); });
  for (std::size_t i = (all_numeric ? 1 : 0); i < tokens.size(); ++i) {
    if (has_digit(tokens[i])) tokens[i] = kWildcard;
  }
  return tokens;
}

double similarity(const std::vector<std::string>& tmpl, const std::vector<std::string>& tokens) {
  std::size_t matches = 0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tmpl[i] == tokens[i] || tmpl[i] == kWildcard) ++matches;
  }
  return static_cast<double>(matches) / static_cast<double>(tokens.size());
}

}  // namespace

DrainParser::DrainParser(DrainConfig config)
    : config_(config), root_(std::make_unique<Node>()) {
  if (config_.depth < 3) throw UsageError("drain: depth must be >= 3");
  if (config_.similarity <= 0.0 || config_.similarity > 1.0)
    throw UsageError("drain: similarity must be in (0, 1]");
  if (config_.max_children < 1) throw UsageError("drain: max_children must be >= 1");
}

std::unique_ptr<DrainParser::Node> DrainParser::clone_node(const Node& node) {
  auto out = std::make_unique<Node>();
  out->template_ids = node.template_ids;
  for (const auto& [key, child] : node.children) out->children.emplace(key, clone_node(*child));
  return out;
}

DrainParser::DrainParser(const DrainParser& other)
    : config_(other.config_), root_(clone_node(*other.root_)), templates_(other.templates_) {}

DrainParser& DrainParser::operator=(const DrainParser& other) {
  if (this != &other) {
    config_ = other.config_;
    root_ = clone_node(*other.root_);
    templates_ = other.templates_;
  }
  return *this;
}

std::vector<std::string> DrainParser::tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t start = i;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i > start) tokens.push_back(text.substr(start, i - start));
  }
  return tokens;
}

DrainParser::Node* DrainParser::descend(const std::vector<std::string>& tokens, bool create) {
  Node* node = root_.get();
  const int token_levels = config_.depth - 2;
  std::string key = std::to_string(tokens.size());
  for (int level = 0; level <= token_levels; ++level) {
    if (level > 0) {
      const std::size_t pos = static_cast<std::size_t>(level - 1);
      if (pos >= tokens.size()) break;  // short messages stop early
      key = tokens[pos];
    }
    auto it = node->children.find(key);
    if (it == node->children.end()) {
      if (!create) return nullptr;
      if (level > 0 && key != kWildcard &&
          static_cast<int>(node->children.size()) >= config_.max_children) {
        key = kWildcard;  // full interior node: funnel into the wildcard branch
        it = node->children.find(key);
        if (it == node->children.end())
          it = node->children.emplace(key, std::make_unique<Node>()).first;
      } else {
        it = node->children.emplace(key, std::make_unique<Node>()).first;
      }
    }
    node = it->second.get();
  }
  return node;
}

int DrainParser::parse(const std::string& raw_text) {
  std::vector<std::string> tokens = preprocess(tokenize(raw_text));
  if (tokens.empty()) tokens.push_back("<empty>");

  Node* leaf = descend(tokens, /*create=*/true);

  int best_id = -1;
  double best_sim = 0.0;
  for (int id : leaf->template_ids) {
    const double sim = similarity(templates_[static_cast<std::size_t>(id)].tokens, tokens);
    if (sim >= config_.similarity && sim > best_sim) {
      best_sim = sim;
      best_id = id;
    }
  }

  if (best_id < 0) {
    const int id = static_cast<int>(templates_.size());
    templates_.push_back({id, tokens});
    leaf->template_ids.push_back(id);
    return id;
  }

  // Merge: diverging positions become wildcards, but never all of them.
  auto& tmpl = templates_[static_cast<std::size_t>(best_id)].tokens;
  int literals = 0;
  for (const auto& t : tmpl) {
    if (t != kWildcard) ++literals;
  }
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tmpl[i] != tokens[i] && tmpl[i] != kWildcard) {
      if (literals <= 1) break;
      tmpl[i] = kWildcard;
      --literals;
    }
  }
  return best_id;
}

Json DrainParser::node_to_json(const Node& node) {
  Json j;
  j["templates"] = node.template_ids;
  Json children = Json::object();
  for (const auto& [key, child] : node.children) children[key] = node_to_json(*child);
  j["children"] = std::move(children);
  return j;
}

std::unique_ptr<DrainParser::Node> DrainParser::node_from_json(const Json& j) {
  auto node = std::make_unique<Node>();
  node->template_ids = j.at("templates").get<std::vector<int>>();
  for (const auto& [key, child] : j.at("children").items()) {
    node->children.emplace(key, node_from_json(child));
  }
  return node;
}

Json DrainParser::to_json() const {
  Json j;
  j["depth"] = config_.depth;
  j["similarity"] = config_.similarity;
  j["max_children"] = config_.max_children;
  Json tmpls = Json::array();
  for (const auto& t : templates_) {
    tmpls.push_back(Json{{"id", t.template_id}, {"tokens", t.tokens}});
  }
  j["template_table"] = std::move(tmpls);
  j["tree"] = node_to_json(*root_);
  return j;
}

DrainParser DrainParser::from_json(const Json& j) {
  DrainConfig cfg;
  cfg.depth = j.at("depth").get<int>();
  cfg.similarity = j.at("similarity").get<double>();
  cfg.max_children = j.at("max_children").get<int>();
  DrainParser parser(cfg);
  for (const auto& t : j.at("template_table")) {
    parser.templates_.push_back(
        {t.at("id").get<int>(), t.at("tokens").get<std::vector<std::string>>()});
  }
  parser.root_ = node_from_json(j.at("tree"));
  return parser;
}

}  // namespace trifuse
