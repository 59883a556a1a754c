// Copyright 2026 the oocd authors
// SPDX-License-Identifier: Apache-2.0
#include "ooc/explain.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>

#include "httplib.h"

// resolv.h (dragged in by httplib's network includes) defines a legacy DNS
// macro named p_class that collides with our field name.
#ifdef p_class
#undef p_class
#endif

namespace ooc {

const char* block_name(BlockId id) {
    switch (id) {
        case BlockId::Image: return "image";
        case BlockId::Label: return "label";
        case BlockId::Caption: return "caption";
        case BlockId::Page: return "page";
    }
    return "?";
}

// ---- attended pages -----------------------------------------------------------

namespace {

RetrievalModality page_modality(const Sample& sample, const std::string& page_id) {
    for (const TextualEvidence& e : sample.textual_evidence)
        if (e.page_id == page_id) return RetrievalModality::InverseSearch;
    for (const VisualEvidence& e : sample.visual_evidence)
        if (e.page_id == page_id) return RetrievalModality::DirectSearch;
    return RetrievalModality::InverseSearch; // page introduced by no evidence
}

} // namespace

std::vector<AttendedPage> select_attended_pages(const AttentionRanking& ranking,
                                                const Sample& sample) {
    struct Selection {
        BlockId block;
        const std::optional<BlockAttention>* attention;
    };
    const Selection selections[] = {
        {BlockId::Image, &ranking.image_block},
        {BlockId::Label, &ranking.label_block},
        {BlockId::Caption, &ranking.caption_block},
        {BlockId::Page, &ranking.page_block},
    };

    std::vector<AttendedPage> pages;
    for (const Selection& sel : selections) {
        if (!sel.attention->has_value()) continue;
        const std::string& page_id = (*sel.attention)->selected_page_id;
        auto existing = std::find_if(pages.begin(), pages.end(), [&](const AttendedPage& p) {
            return p.page.page_id == page_id;
        });
        if (existing != pages.end()) {
            existing->selecting_blocks.push_back(sel.block);
            continue;
        }
        int index = sample.page_index(page_id);
        if (index < 0) throw Error("select_attended_pages: unknown page_id " + page_id);
        AttendedPage ap;
        ap.page = sample.pages[static_cast<size_t>(index)];
        ap.modality = page_modality(sample, page_id);
        ap.selecting_blocks.push_back(sel.block);
        pages.push_back(std::move(ap));
    }
    return pages;
}

// ---- prompt -------------------------------------------------------------------

std::string utf8_prefix(const std::string& text, size_t max_chars) {
    size_t chars = 0;
    size_t i = 0;
    while (i < text.size() && chars < max_chars) {
        unsigned char c = static_cast<unsigned char>(text[i]);
        size_t advance = 1;
        if ((c & 0xe0) == 0xc0) {
            advance = 2;
        } else if ((c & 0xf0) == 0xe0) {
            advance = 3;
        } else if ((c & 0xf8) == 0xf0) {
            advance = 4;
        }
        i = std::min(text.size(), i + advance);
        ++chars;
    }
    return text.substr(0, i);
}

namespace {

std::string format_scalar(Scalar v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

std::string evidence_sentence(const AttendedPage& page) {
    std::string content = utf8_prefix(page.page.content, kPromptContentChars);
    if (page.modality == RetrievalModality::DirectSearch) {
        return "An evidence retrieved using the caption to query the web, obtained because it "
               "contains an image with high similarity with the submitted image has title " +
               page.page.title + " and content of the paragraphs " + content;
    }
    return "An evidence retrieved using the image to query the web, obtained because it "
           "contains a text with high similarity with the submitted caption has title " +
           page.page.title + " and content of the paragraphs " + content;
}

} // namespace

std::string build_prompt(const Sample& sample, const Prediction& prediction,
                         const std::vector<AttendedPage>& pages) {
    // The prompt reports the probability of the pair sharing a context, which
    // is the complement of p_class (the falsified probability).
    Scalar likelihood = Scalar(1) - prediction.p_class;
    std::string image_slot = sample.image_ref ? *sample.image_ref : "<image>";

    std::string prompt =
        "You are a tool for out-of-context detection, your task is to give reasons why the "
        "submitted image and the caption below are in the same context or not. "
        "Submitted Image: " +
        image_slot + ". Caption: " + sample.caption_text +
        ". The likelihood of the submitted image and the above caption being in the same "
        "context is " +
        format_scalar(likelihood) + ", thus the pair is " + verdict_name(prediction.verdict);
    for (const AttendedPage& page : pages) prompt += ". " + evidence_sentence(page);
    return prompt;
}

// ---- clients ------------------------------------------------------------------

GenerationResult StubClient::generate(const std::string& prompt,
                                      const std::optional<std::string>& image_b64) {
    (void)image_b64;
    std::string verdict = "Unknown";
    if (prompt.find(std::string("thus the pair is ") + verdict_name(Verdict::Falsified)) !=
        std::string::npos) {
        verdict = verdict_name(Verdict::Falsified);
    } else if (prompt.find(std::string("thus the pair is ") + verdict_name(Verdict::Pristine)) !=
               std::string::npos) {
        verdict = verdict_name(Verdict::Pristine);
    }
    GenerationResult result;
    result.ok = true;
    result.text = "STUB[" + verdict + "]: " + utf8_prefix(prompt, 80);
    return result;
}

HttpGenerationClient::HttpGenerationClient(std::string endpoint, int timeout_seconds)
    : endpoint_(std::move(endpoint)), timeout_seconds_(timeout_seconds) {}

GenerationResult HttpGenerationClient::generate(const std::string& prompt,
                                                const std::optional<std::string>& image_b64) {
    GenerationResult result;
    // Split scheme://host:port from the path.
    size_t scheme_end = endpoint_.find("://");
    size_t path_start =
        scheme_end == std::string::npos ? endpoint_.find('/') : endpoint_.find('/', scheme_end + 3);
    std::string base = path_start == std::string::npos ? endpoint_ : endpoint_.substr(0, path_start);
    std::string path = path_start == std::string::npos ? "/" : endpoint_.substr(path_start);

    httplib::Client client(base);
    client.set_connection_timeout(timeout_seconds_, 0);
    client.set_read_timeout(timeout_seconds_, 0);

    nlohmann::ordered_json body;
    body["prompt"] = prompt;
    if (image_b64) body["image_b64"] = *image_b64;

    auto response = client.Post(path, body.dump(), "application/json");
    if (!response) {
        result.error = "transport failure contacting " + endpoint_ + ": " +
                       httplib::to_string(response.error());
        return result;
    }
    if (response->status != 200) {
        result.error = "endpoint " + endpoint_ + " returned status " +
                       std::to_string(response->status);
        return result;
    }
    try {
        nlohmann::json j = nlohmann::json::parse(response->body);
        result.text = j.at("text").get<std::string>();
        result.ok = true;
    } catch (const nlohmann::json::exception& e) {
        result.error = std::string("malformed response body: ") + e.what();
    }
    return result;
}

std::unique_ptr<GenerationClient> make_generation_client(const std::string& endpoint,
                                                         int timeout_seconds) {
    if (endpoint == "stub" || endpoint.empty()) return std::make_unique<StubClient>();
    return std::make_unique<HttpGenerationClient>(endpoint, timeout_seconds);
}

// ---- warning report --------------------------------------------------------------

WarningReport generate_warning(const Sample& sample, const Prediction& prediction,
                               const std::vector<AttendedPage>& pages, GenerationClient& client) {
    WarningReport report;
    report.sample_id = sample.sample_id;
    report.verdict = prediction.verdict;
    report.p_class = prediction.p_class;
    report.prompt = build_prompt(sample, prediction, pages);
    for (const AttendedPage& page : pages) report.links.push_back(page.page.url);

    if (client.requires_image() && !sample.image_ref) {
        report.error = "client requires an image but the sample has no image_ref";
        return report;
    }
    std::optional<std::string> image_b64;
    if (sample.image_ref) {
        std::ifstream file(*sample.image_ref, std::ios::binary);
        if (file) {
            std::string bytes((std::istreambuf_iterator<char>(file)),
                              std::istreambuf_iterator<char>());
            image_b64 = base64_encode(bytes);
        } else if (client.requires_image()) {
            report.error = "client requires an image but " + *sample.image_ref + " is unreadable";
            return report;
        }
    }

    GenerationResult result = client.generate(report.prompt, image_b64);
    if (result.ok) {
        report.generated_text = result.text;
    } else {
        report.error = result.error;
    }
    return report;
}

nlohmann::ordered_json report_to_json(const WarningReport& report) {
    nlohmann::ordered_json j;
    j["sample_id"] = report.sample_id;
    j["prompt"] = report.prompt;
    j["verdict"] = verdict_name(report.verdict);
    j["p_class"] = report.p_class;
    j["generated_text"] = report.generated_text;
    j["links"] = report.links;
    if (!report.error.empty()) j["error"] = report.error;
    return j;
}

std::string base64_encode(const std::string& bytes) {
    static const char alphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    size_t i = 0;
    while (i + 2 < bytes.size()) {
        uint32_t v = (static_cast<uint8_t>(bytes[i]) << 16) |
                     (static_cast<uint8_t>(bytes[i + 1]) << 8) | static_cast<uint8_t>(bytes[i + 2]);
        out.push_back(alphabet[(v >> 18) & 63]);
        out.push_back(alphabet[(v >> 12) & 63]);
        out.push_back(alphabet[(v >> 6) & 63]);
        out.push_back(alphabet[v & 63]);
        i += 3;
    }
    if (i + 1 == bytes.size()) {
        uint32_t v = static_cast<uint8_t>(bytes[i]) << 16;
        out.push_back(alphabet[(v >> 18) & 63]);
        out.push_back(alphabet[(v >> 12) & 63]);
        out += "==";
    } else if (i + 2 == bytes.size()) {
        uint32_t v = (static_cast<uint8_t>(bytes[i]) << 16) |
                     (static_cast<uint8_t>(bytes[i + 1]) << 8);
        out.push_back(alphabet[(v >> 18) & 63]);
        out.push_back(alphabet[(v >> 12) & 63]);
        out.push_back(alphabet[(v >> 6) & 63]);
        out.push_back('=');
    }
    return out;
}

} // namespace ooc
