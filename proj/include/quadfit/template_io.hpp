#pragma once

#include <string>

#include "quadfit/model.hpp"

namespace quadfit {

inline constexpr int kTemplateSchemaVersion = 1;

/// Reads the JSON template schema. Throws ParseError (naming the field) for
/// malformed documents, ValidationError for invariant violations, IoError if
/// the file cannot be opened.
ModelTemplate load_template(const std::string& path);
void save_template(const ModelTemplate& tmpl, const std::string& path);

}  // namespace quadfit
