// Copyright 2026 the oocd authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "ooc/model.hpp"

namespace ooc {

enum class RetrievalModality { DirectSearch, InverseSearch };
enum class BlockId { Image, Label, Caption, Page };
const char* block_name(BlockId id);

/// A source page cited in the warning prompt: which blocks selected it and
/// how its evidence was retrieved. Pages reachable through textual evidence
/// (or through no evidence at all) take inverse-search modality.
struct AttendedPage {
    PageRecord page;
    RetrievalModality modality = RetrievalModality::InverseSearch;
    std::vector<BlockId> selecting_blocks;
};

/// Top-1 page per active attention block, deduplicated preserving block order
/// (image, label, caption, page). At most four entries.
std::vector<AttendedPage> select_attended_pages(const AttentionRanking& ranking,
                                                const Sample& sample);

/// Maximum number of page-content characters quoted in the prompt.
inline constexpr size_t kPromptContentChars = 400;

/// UTF-8 prefix of at most `max_chars` code points, never splitting a
/// multi-byte character.
std::string utf8_prefix(const std::string& text, size_t max_chars);

/// Warning-generation prompt: fixed header with the image reference, caption,
/// same-context likelihood (1 - p_class) and verdict token, followed by one
/// evidence sentence per attended page.
std::string build_prompt(const Sample& sample, const Prediction& prediction,
                         const std::vector<AttendedPage>& pages);

struct GenerationResult {
    bool ok = false;
    std::string text;
    std::string error;
};

/// Client for the external generation service. The wire protocol is a JSON
/// POST {"prompt": ..., "image_b64": optional} answered by {"text": ...}.
class GenerationClient {
public:
    virtual ~GenerationClient() = default;
    virtual GenerationResult generate(const std::string& prompt,
                                      const std::optional<std::string>& image_b64) = 0;
    virtual bool requires_image() const { return false; }
};

/// Deterministic offline client: echoes the verdict token parsed from the
/// prompt plus the first 80 prompt characters.
class StubClient : public GenerationClient {
public:
    GenerationResult generate(const std::string& prompt,
                              const std::optional<std::string>& image_b64) override;
};

class HttpGenerationClient : public GenerationClient {
public:
    explicit HttpGenerationClient(std::string endpoint, int timeout_seconds = 30);
    GenerationResult generate(const std::string& prompt,
                              const std::optional<std::string>& image_b64) override;

private:
    std::string endpoint_;
    int timeout_seconds_;
};

/// "stub" selects the built-in client; anything else is an HTTP endpoint URL.
std::unique_ptr<GenerationClient> make_generation_client(const std::string& endpoint,
                                                         int timeout_seconds = 30);

struct WarningReport {
    std::string sample_id;
    std::string prompt;
    Verdict verdict = Verdict::Pristine;
    Scalar p_class = 0;
    std::string generated_text;
    std::vector<std::string> links;
    std::string error; // empty on success
};

/// Builds the prompt, calls the client and assembles the report. Transport
/// failures keep the prompt and links and record the error.
WarningReport generate_warning(const Sample& sample, const Prediction& prediction,
                               const std::vector<AttendedPage>& pages, GenerationClient& client);

nlohmann::ordered_json report_to_json(const WarningReport& report);

std::string base64_encode(const std::string& bytes);

} // namespace ooc
