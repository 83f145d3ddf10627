#pragma once

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>
#include <regex>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "cohort.hpp"
#include "common.hpp"
#include "csv.hpp"

namespace aas {

class ReportError : public Error {
public:
    explicit ReportError(const std::string& what) : Error("reports", what) {}
};

inline const std::vector<std::string>& default_keywords() {
    static const std::vector<std::string> k{"dissection", "hematoma", "ulcer"};
    return k;
}

struct KeywordHit {
    std::string keyword;
    std::string section;
    std::size_t offset = 0;  // into the section body

    friend bool operator==(const KeywordHit&, const KeywordHit&) = default;
};

enum class ScreenLabel { Unflagged, Flagged };

enum class MatchMode { WholeWord, Substring };

struct ReportDoc {
    std::string raw_text;
    std::vector<std::pair<std::string, std::string>> sections;  // heading -> body, document order
    std::vector<KeywordHit> keyword_hits;
    ScreenLabel screen_label = ScreenLabel::Unflagged;

    [[nodiscard]] const std::string* section(const std::string& heading) const {
        for (const auto& [h, b] : sections)
            if (h == heading) return &b;
        return nullptr;
    }
    [[nodiscard]] bool flagged() const noexcept { return screen_label == ScreenLabel::Flagged; }
};

namespace detail {

inline std::string lower(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

inline bool is_letter(char c) noexcept { return std::isalpha(static_cast<unsigned char>(c)) != 0; }

inline std::string trim_text(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace detail

/// Splits report text on FINDINGS:/IMPRESSION: heading lines (any case).
/// Text before the first heading becomes "PREAMBLE"; repeated headings are
/// joined with a newline. Bodies are whitespace-trimmed.
inline ReportDoc parse_report(const std::string& text) {
    static const std::regex heading(R"(^\s*(FINDINGS|IMPRESSION)\s*:(.*)$)", std::regex::icase);
    ReportDoc doc;
    doc.raw_text = text;
    std::vector<std::pair<std::string, std::string>> raw{{"PREAMBLE", {}}};
    std::istringstream in(text);
    bool first_line = true;
    for (std::string line; std::getline(in, line);) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::smatch m;
        if (std::regex_match(line, m, heading)) {
            raw.emplace_back(detail::lower(m[1].str()) == "findings" ? "FINDINGS" : "IMPRESSION", m[2].str());
            first_line = true;
            continue;
        }
        auto& body = raw.back().second;
        if (!first_line || !body.empty()) body += '\n';
        body += line;
        first_line = false;
    }
    for (auto& [h, b] : raw) {
        std::string body = detail::trim_text(b);
        auto it = std::find_if(doc.sections.begin(), doc.sections.end(), [&](const auto& s) { return s.first == h; });
        if (it == doc.sections.end()) {
            doc.sections.emplace_back(h, std::move(body));
        } else if (!body.empty()) {
            if (!it->second.empty()) it->second += '\n';
            it->second += body;
        }
    }
    return doc;
}

/// Case-insensitive keyword search restricted to FINDINGS and IMPRESSION.
/// In whole-word mode a match must be bounded by non-letters (so hyphenated
/// compounds match and inflected forms such as "ulcerated" do not).
inline ReportDoc keyword_screen(ReportDoc doc, const std::vector<std::string>& keywords = default_keywords(),
                                MatchMode mode = MatchMode::WholeWord) {
    if (keywords.empty()) throw ReportError("empty keyword list");
    doc.keyword_hits.clear();
    for (const auto& [heading, body] : doc.sections) {
        if (heading != "FINDINGS" && heading != "IMPRESSION") continue;
        const std::string hay = detail::lower(body);
        for (const auto& kw : keywords) {
            const std::string needle = detail::lower(kw);
            if (needle.empty()) throw ReportError("empty keyword");
            for (auto pos = hay.find(needle); pos != std::string::npos; pos = hay.find(needle, pos + 1)) {
                if (mode == MatchMode::WholeWord) {
                    const bool left_ok = pos == 0 || !detail::is_letter(hay[pos - 1]);
                    const std::size_t end = pos + needle.size();
                    const bool right_ok = end == hay.size() || !detail::is_letter(hay[end]);
                    if (!left_ok || !right_ok) continue;
                }
                doc.keyword_hits.push_back({kw, heading, pos});
            }
        }
    }
    std::stable_sort(doc.keyword_hits.begin(), doc.keyword_hits.end(), [](const KeywordHit& a, const KeywordHit& b) {
        return a.section != b.section ? a.section < b.section : a.offset < b.offset;
    });
    doc.screen_label = doc.keyword_hits.empty() ? ScreenLabel::Unflagged : ScreenLabel::Flagged;
    return doc;
}

/// Canonical text form; parse_report(serialize_report(d)) reproduces d's sections.
inline std::string serialize_report(const ReportDoc& doc) {
    std::string out;
    for (const auto& [h, b] : doc.sections) {
        if (h == "PREAMBLE") {
            if (!b.empty()) out += b + "\n";
            continue;
        }
        out += h + ":\n" + b + "\n";
    }
    return out;
}

using LabelOverrides = std::map<std::string, Label>;

/// Manual adjudication wins; otherwise flagged reports need review
/// (uncertain) and unflagged ones are negative.
inline Label assign_label(const ReportDoc& doc, const std::string& scan_id, const LabelOverrides& overrides) {
    if (auto it = overrides.find(scan_id); it != overrides.end()) return it->second;
    return doc.flagged() ? Label::Uncertain : Label::Negative;
}

inline LabelOverrides load_overrides(const std::filesystem::path& path) {
    const auto t = csv::read(path, "reports");
    const auto c_scan = t.column("scan_id", "reports");
    const auto c_label = t.column("label", "reports");
    LabelOverrides out;
    for (const auto& row : t.rows) {
        try {
            out[row[c_scan]] = parse_label(row[c_label]);
        } catch (const CohortError& e) {
            throw ReportError(std::string("overrides: ") + e.what());
        }
    }
    return out;
}

inline std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ReportError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct LabeledReport {
    std::string scan_id;
    ReportDoc doc;
    Label label = Label::Negative;
};

/// Screens every `<scan_id>.txt` in `dir` (sorted by scan_id) and produces
/// manifest rows with blank mean_hu. Patient ids default to the scan id.
inline Cohort label_report_directory(const std::filesystem::path& dir, const LabelOverrides& overrides,
                                     const std::vector<std::string>& keywords = default_keywords(),
                                     MatchMode mode = MatchMode::WholeWord,
                                     std::vector<LabeledReport>* details = nullptr) {
    if (!std::filesystem::is_directory(dir)) throw ReportError("not a directory: '" + dir.string() + "'");
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".txt") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    Cohort out;
    for (const auto& f : files) {
        const std::string id = f.stem().string();
        auto doc = keyword_screen(parse_report(read_text_file(f)), keywords, mode);
        CohortRecord r;
        r.scan_id = id;
        r.patient_id = id;
        r.label = assign_label(doc, id, overrides);
        r.split = r.label == Label::Uncertain ? Split::Excluded : Split::Unassigned;
        out.push_back(r);
        if (details) details->push_back({id, std::move(doc), r.label});
    }
    return out;
}

}  // namespace aas
