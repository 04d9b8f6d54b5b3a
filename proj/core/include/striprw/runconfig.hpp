#pragma once

/// @file runconfig.hpp
/// @brief Configuration-driven orchestration of the analysis and experiment
/// stages, shared by the command-line tool and the tests.
///
/// A run configuration is a JSON document (see docs/config-schema.md) naming
/// an environment, an analysis window, and the stages to execute. Stages run
/// in dependency order (environment -> hierarchy -> harmonic -> {green,
/// experiments}); each stage writes its artifacts before the next one starts,
/// so a late failure leaves earlier outputs intact. Timestamps appear only in
/// the manifest, keeping every other artifact byte-reproducible.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "striprw/env.hpp"
#include "striprw/hierarchy.hpp"

namespace striprw {

struct RunOverrides {
    std::string output_dir;           ///< empty = use the config's output_dir
    std::int64_t seed = -1;           ///< < 0 = use the config's seed
    std::vector<std::string> stages;  ///< empty = all configured stages
    std::ostream* log = nullptr;      ///< optional progress stream
};

struct RunOutcome {
    /// 0 = all criteria met, 1 = criteria failure, 2 = configuration error,
    /// 3 = numerical error.
    int exit_code = 0;
    bool criteria_pass = true;
    std::vector<std::string> artifacts;  ///< file names written (order of creation)
    std::string message;                 ///< one-line summary or error text
};

/// Parse and schema-validate a configuration document; unknown keys anywhere
/// are rejected. Returns the normalized JSON text with defaults filled in.
/// Throws ConfigInvalid on any violation.
std::string validate_run_config(const std::string& config_json);

/// Execute the configured stages and write artifacts plus a manifest.
/// Exceptions are mapped to exit codes instead of escaping.
RunOutcome run_config(const std::string& config_json, const RunOverrides& overrides = {});

/// Same, reading the configuration from a file.
RunOutcome run_config_file(const std::string& path, const RunOverrides& overrides = {});

/// Environment + hierarchy under the adaptive buffer policy: when the
/// boundary-seed diagnostics fail at tolerance `tol`, the environment is
/// rebuilt with twice the buffer, up to `max_doublings` times; exhaustion
/// rethrows the final BufferTooSmall.
std::pair<Environment, HierarchyData> hierarchy_with_buffer_policy(
    const std::string& env_spec_json, std::int64_t window_lo, std::int64_t window_hi, int buffer,
    double tol, int max_doublings = 4);

std::string library_version();

}  // namespace striprw
