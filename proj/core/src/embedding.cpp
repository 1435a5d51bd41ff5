#include "cspace/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cspace/error.hpp"

namespace cspace {

namespace {

std::string read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("cannot open file: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void check_finite(const EmbeddingMatrix& m, const std::string& origin) {
    for (std::size_t i = 0; i < m.rows; ++i) {
        const double* r = m.row(i);
        for (std::size_t j = 0; j < m.dims; ++j) {
            if (!std::isfinite(r[j])) {
                fail(origin + ": non-finite value at row " + std::to_string(i + 1) +
                     ", col " + std::to_string(j + 1));
            }
        }
    }
}

// --- NPY version 1.0 -------------------------------------------------------

struct NpyHeader {
    std::string descr;
    bool fortran_order = false;
    std::vector<std::size_t> shape;
};

// The header is a Python dict literal; a tolerant scan for the three fixed
// keys is all we need for the v1.0 subset accepted here.
NpyHeader parse_npy_dict(const std::string& dict, const std::string& origin) {
    NpyHeader h;
    auto find_key = [&](const std::string& key) {
        auto pos = dict.find("'" + key + "'");
        if (pos == std::string::npos) fail(origin + ": malformed NPY header, missing key '" + key + "'");
        pos = dict.find(':', pos);
        if (pos == std::string::npos) fail(origin + ": malformed NPY header near '" + key + "'");
        return pos + 1;
    };

    std::size_t p = find_key("descr");
    std::size_t q1 = dict.find('\'', p);
    std::size_t q2 = q1 == std::string::npos ? std::string::npos : dict.find('\'', q1 + 1);
    if (q2 == std::string::npos) fail(origin + ": malformed NPY header, unreadable descr");
    h.descr = dict.substr(q1 + 1, q2 - q1 - 1);

    p = find_key("fortran_order");
    while (p < dict.size() && dict[p] == ' ') ++p;
    if (dict.compare(p, 4, "True") == 0) h.fortran_order = true;
    else if (dict.compare(p, 5, "False") == 0) h.fortran_order = false;
    else fail(origin + ": malformed NPY header, unreadable fortran_order");

    p = find_key("shape");
    std::size_t open = dict.find('(', p);
    std::size_t close = open == std::string::npos ? std::string::npos : dict.find(')', open);
    if (close == std::string::npos) fail(origin + ": malformed NPY header, unreadable shape");
    std::string tuple = dict.substr(open + 1, close - open - 1);
    std::istringstream ts(tuple);
    std::string item;
    while (std::getline(ts, item, ',')) {
        std::string trimmed;
        for (char c : item)
            if (!std::isspace(static_cast<unsigned char>(c))) trimmed += c;
        if (trimmed.empty()) continue;
        h.shape.push_back(static_cast<std::size_t>(std::stoull(trimmed)));
    }
    return h;
}

EmbeddingMatrix load_npy(const std::filesystem::path& path) {
    const std::string origin = path.string();
    const std::string bytes = read_file_bytes(path);
    if (bytes.size() < 10 || std::memcmp(bytes.data(), "\x93NUMPY", 6) != 0)
        fail(origin + ": not an NPY file (bad magic)");
    const unsigned major = static_cast<unsigned char>(bytes[6]);
    const unsigned minor = static_cast<unsigned char>(bytes[7]);
    if (major != 1 || minor != 0)
        fail(origin + ": unsupported NPY version " + std::to_string(major) + "." +
             std::to_string(minor) + " (expected 1.0)");
    const std::size_t header_len =
        static_cast<unsigned char>(bytes[8]) | (static_cast<unsigned char>(bytes[9]) << 8);
    if (10 + header_len > bytes.size()) fail(origin + ": malformed NPY header (truncated)");
    NpyHeader h = parse_npy_dict(bytes.substr(10, header_len), origin);

    if (h.fortran_order) fail(origin + ": Fortran-order NPY not supported (C-order required)");
    if (h.shape.size() != 2)
        fail(origin + ": expected a 2-D array, got " + std::to_string(h.shape.size()) + " dims");

    std::size_t item = 0;
    if (h.descr == "<f4" || h.descr == "=f4") item = 4;
    else if (h.descr == "<f8" || h.descr == "=f8") item = 8;
    else fail(origin + ": unsupported dtype '" + h.descr + "' (32/64-bit little-endian float required)");

    EmbeddingMatrix m;
    m.rows = h.shape[0];
    m.dims = h.shape[1];
    if (m.rows < 2 || m.dims < 1)
        fail(origin + ": matrix must have at least 2 rows and 1 column, got " +
             std::to_string(m.rows) + "x" + std::to_string(m.dims));

    const std::size_t payload = 10 + header_len;
    const std::size_t need = m.rows * m.dims * item;
    if (bytes.size() - payload != need)
        fail(origin + ": payload size mismatch (header says " + std::to_string(need) +
             " bytes, file has " + std::to_string(bytes.size() - payload) + ")");

    m.data.resize(m.rows * m.dims);
    const char* src = bytes.data() + payload;
    if (item == 4) {
        for (std::size_t i = 0; i < m.data.size(); ++i) {
            float f;
            std::memcpy(&f, src + i * 4, 4);
            m.data[i] = static_cast<double>(f);
        }
    } else {
        std::memcpy(m.data.data(), src, need);
    }
    check_finite(m, origin);
    recompute_norms(m);
    return m;
}

// --- rawbin (f32 + JSON sidecar) -------------------------------------------

EmbeddingMatrix load_rawbin(const std::filesystem::path& path) {
    const std::string origin = path.string();
    std::filesystem::path sidecar = path;
    sidecar += ".json";
    if (!std::filesystem::exists(sidecar))
        fail(origin + ": missing sidecar header " + sidecar.string());

    nlohmann::json hdr;
    try {
        std::ifstream in(sidecar);
        in >> hdr;
    } catch (const std::exception& e) {
        fail(sidecar.string() + ": malformed header: " + e.what());
    }
    for (const char* key : {"rows", "cols", "dtype", "order"})
        if (!hdr.contains(key)) fail(sidecar.string() + ": malformed header, missing \"" + key + "\"");
    if (hdr["dtype"] != "f32")
        fail(sidecar.string() + ": unsupported dtype \"" + hdr["dtype"].get<std::string>() +
             "\" (rawbin is f32 only)");
    if (hdr["order"] != "row-major")
        fail(sidecar.string() + ": unsupported order \"" + hdr["order"].get<std::string>() + "\"");

    EmbeddingMatrix m;
    m.rows = hdr["rows"].get<std::size_t>();
    m.dims = hdr["cols"].get<std::size_t>();
    if (m.rows < 2 || m.dims < 1)
        fail(origin + ": matrix must have at least 2 rows and 1 column, got " +
             std::to_string(m.rows) + "x" + std::to_string(m.dims));

    const std::string bytes = read_file_bytes(path);
    const std::size_t need = m.rows * m.dims * 4;
    if (bytes.size() != need)
        fail(origin + ": payload size mismatch (header says " + std::to_string(need) +
             " bytes, file has " + std::to_string(bytes.size()) + ")");

    m.data.resize(m.rows * m.dims);
    for (std::size_t i = 0; i < m.data.size(); ++i) {
        float f;
        std::memcpy(&f, bytes.data() + i * 4, 4);
        m.data[i] = static_cast<double>(f);
    }
    check_finite(m, origin);
    recompute_norms(m);
    return m;
}

// --- CSV --------------------------------------------------------------------

EmbeddingMatrix load_csv(const std::filesystem::path& path) {
    const std::string origin = path.string();
    std::ifstream in(path);
    if (!in) fail("cannot open file: " + origin);

    EmbeddingMatrix m;
    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        ++row;
        std::size_t col = 0;
        std::size_t pos = 0;
        while (pos <= line.size()) {
            std::size_t comma = line.find(',', pos);
            std::string cell = line.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
            ++col;
            char* end = nullptr;
            const double v = std::strtod(cell.c_str(), &end);
            if (end == cell.c_str() || (end && *end != '\0' && !std::isspace(static_cast<unsigned char>(*end))))
                fail(origin + ": cannot parse value \"" + cell + "\" at row " + std::to_string(row) +
                     ", col " + std::to_string(col));
            if (!std::isfinite(v))
                fail(origin + ": non-finite value at row " + std::to_string(row) + ", col " +
                     std::to_string(col));
            m.data.push_back(v);
            if (comma == std::string::npos) break;
            pos = comma + 1;
        }
        if (m.dims == 0) {
            m.dims = col;
        } else if (col != m.dims) {
            fail(origin + ": row " + std::to_string(row) + " has " + std::to_string(col) +
                 " columns, expected " + std::to_string(m.dims));
        }
    }
    m.rows = m.dims == 0 ? 0 : m.data.size() / m.dims;
    if (m.rows < 2 || m.dims < 1)
        fail(origin + ": matrix must have at least 2 rows and 1 column, got " +
             std::to_string(m.rows) + "x" + std::to_string(m.dims));
    recompute_norms(m);
    return m;
}

void append_utf8(std::string& out, std::uint32_t cp) {
    if (cp <= 0x7F) {
        out += static_cast<char>(cp);
    } else if (cp <= 0x7FF) {
        out += static_cast<char>(0xC0 | (cp >> 6));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    } else if (cp <= 0xFFFF) {
        out += static_cast<char>(0xE0 | (cp >> 12));
        out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    } else {
        out += static_cast<char>(0xF0 | (cp >> 18));
        out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
        out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    }
}

}  // namespace

EmbeddingFormat parse_embedding_format(std::string_view name) {
    if (name == "npy") return EmbeddingFormat::npy;
    if (name == "rawbin") return EmbeddingFormat::rawbin;
    if (name == "csv") return EmbeddingFormat::csv;
    fail("unknown embedding format '" + std::string(name) + "' (expected npy, rawbin, or csv)");
}

void recompute_norms(EmbeddingMatrix& m) {
    m.norms.assign(m.rows, 0.0);
    m.zero_norm_rows = 0;
    for (std::size_t i = 0; i < m.rows; ++i) {
        const double* r = m.row(i);
        double acc = 0.0;
        for (std::size_t j = 0; j < m.dims; ++j) acc += r[j] * r[j];
        m.norms[i] = std::sqrt(acc);
        if (m.norms[i] < 1e-12) ++m.zero_norm_rows;
    }
}

EmbeddingMatrix load_embeddings(const std::filesystem::path& path, EmbeddingFormat format) {
    if (!std::filesystem::exists(path)) fail("embeddings file does not exist: " + path.string());
    switch (format) {
        case EmbeddingFormat::npy: return load_npy(path);
        case EmbeddingFormat::rawbin: return load_rawbin(path);
        case EmbeddingFormat::csv: return load_csv(path);
    }
    fail("unreachable embedding format");
}

void save_embeddings_csv(const EmbeddingMatrix& m, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail("cannot write file: " + path.string());
    char buf[40];
    for (std::size_t i = 0; i < m.rows; ++i) {
        const double* r = m.row(i);
        for (std::size_t j = 0; j < m.dims; ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", r[j]);
            if (j) out << ',';
            out << buf;
        }
        out << '\n';
    }
}

void save_embeddings_npy(const EmbeddingMatrix& m, const std::filesystem::path& path, bool as_f32) {
    std::string dict = "{'descr': '" + std::string(as_f32 ? "<f4" : "<f8") +
                       "', 'fortran_order': False, 'shape': (" + std::to_string(m.rows) + ", " +
                       std::to_string(m.dims) + "), }";
    std::size_t total = 10 + dict.size() + 1;
    const std::size_t pad = (64 - total % 64) % 64;
    dict.append(pad, ' ');
    dict += '\n';

    std::ofstream out(path, std::ios::binary);
    if (!out) fail("cannot write file: " + path.string());
    out.write("\x93NUMPY\x01\x00", 8);
    const std::uint16_t hlen = static_cast<std::uint16_t>(dict.size());
    out.put(static_cast<char>(hlen & 0xFF));
    out.put(static_cast<char>(hlen >> 8));
    out.write(dict.data(), static_cast<std::streamsize>(dict.size()));
    if (as_f32) {
        for (double v : m.data) {
            const float f = static_cast<float>(v);
            out.write(reinterpret_cast<const char*>(&f), 4);
        }
    } else {
        out.write(reinterpret_cast<const char*>(m.data.data()),
                  static_cast<std::streamsize>(m.data.size() * 8));
    }
}

void save_embeddings_rawbin(const EmbeddingMatrix& m, const std::filesystem::path& path) {
    {
        std::ofstream out(path, std::ios::binary);
        if (!out) fail("cannot write file: " + path.string());
        for (double v : m.data) {
            const float f = static_cast<float>(v);
            out.write(reinterpret_cast<const char*>(&f), 4);
        }
    }
    nlohmann::json hdr{{"rows", m.rows}, {"cols", m.dims}, {"dtype", "f32"}, {"order", "row-major"}};
    std::filesystem::path sidecar = path;
    sidecar += ".json";
    std::ofstream out(sidecar, std::ios::binary);
    if (!out) fail("cannot write file: " + sidecar.string());
    out << hdr.dump() << '\n';
}

EmbeddingMatrix center(const EmbeddingMatrix& m) {
    if (m.centered) fail("matrix is already centered");
    EmbeddingMatrix out;
    out.rows = m.rows;
    out.dims = m.dims;
    out.data.resize(m.data.size());

    std::vector<double> mean(m.dims, 0.0);
    for (std::size_t i = 0; i < m.rows; ++i) {
        const double* r = m.row(i);
        for (std::size_t j = 0; j < m.dims; ++j) mean[j] += r[j];
    }
    for (std::size_t j = 0; j < m.dims; ++j) mean[j] /= static_cast<double>(m.rows);

    for (std::size_t i = 0; i < m.rows; ++i) {
        const double* r = m.row(i);
        double* o = out.row(i);
        for (std::size_t j = 0; j < m.dims; ++j) o[j] = r[j] - mean[j];
    }
    out.centered = true;
    recompute_norms(out);
    return out;
}

Vocabulary make_vocabulary(std::vector<std::string> tokens) {
    Vocabulary v;
    v.tokens = std::move(tokens);
    v.index.reserve(v.tokens.size());
    for (std::size_t i = 0; i < v.tokens.size(); ++i) {
        auto [it, inserted] = v.index.emplace(v.tokens[i], static_cast<std::uint32_t>(i));
        if (!inserted)
            fail("duplicate token \"" + v.tokens[i] + "\" at line " + std::to_string(i + 1) +
                 " (first at line " + std::to_string(it->second + 1) + ")");
    }
    return v;
}

std::string escape_token(std::string_view token) {
    std::string out;
    out.reserve(token.size());
    for (unsigned char c : token) {
        switch (c) {
            case '\\': out += "\\\\"; break;
            case '\n': out += "\\n"; break;
            case '\t': out += "\\t"; break;
            case '\r': out += "\\r"; break;
            default:
                if (c < 0x20) {
                    char buf[8];
                    std::snprintf(buf, sizeof buf, "\\u%04x", c);
                    out += buf;
                } else {
                    out += static_cast<char>(c);
                }
        }
    }
    return out;
}

std::string unescape_token(std::string_view line) {
    std::string out;
    out.reserve(line.size());
    std::size_t i = 0;
    auto hex4 = [&](std::size_t pos) -> std::uint32_t {
        if (pos + 4 > line.size()) fail("bad \\u escape in vocab line: " + std::string(line));
        std::uint32_t v = 0;
        for (std::size_t k = 0; k < 4; ++k) {
            const char c = line[pos + k];
            v <<= 4;
            if (c >= '0' && c <= '9') v |= static_cast<std::uint32_t>(c - '0');
            else if (c >= 'a' && c <= 'f') v |= static_cast<std::uint32_t>(c - 'a' + 10);
            else if (c >= 'A' && c <= 'F') v |= static_cast<std::uint32_t>(c - 'A' + 10);
            else fail("bad \\u escape in vocab line: " + std::string(line));
        }
        return v;
    };
    while (i < line.size()) {
        const char c = line[i];
        if (c != '\\') {
            out += c;
            ++i;
            continue;
        }
        if (i + 1 >= line.size()) fail("dangling backslash in vocab line: " + std::string(line));
        const char e = line[i + 1];
        switch (e) {
            case '\\': out += '\\'; i += 2; break;
            case 'n': out += '\n'; i += 2; break;
            case 't': out += '\t'; i += 2; break;
            case 'r': out += '\r'; i += 2; break;
            case 'u': {
                std::uint32_t cp = hex4(i + 2);
                i += 6;
                if (cp >= 0xD800 && cp <= 0xDBFF) {
                    if (i + 6 <= line.size() && line[i] == '\\' && line[i + 1] == 'u') {
                        const std::uint32_t lo = hex4(i + 2);
                        if (lo >= 0xDC00 && lo <= 0xDFFF) {
                            cp = 0x10000 + ((cp - 0xD800) << 10) + (lo - 0xDC00);
                            i += 6;
                        } else {
                            fail("unpaired surrogate in vocab line: " + std::string(line));
                        }
                    } else {
                        fail("unpaired surrogate in vocab line: " + std::string(line));
                    }
                }
                append_utf8(out, cp);
                break;
            }
            default:
                fail(std::string("unknown escape \"\\") + e + "\" in vocab line: " + std::string(line));
        }
    }
    return out;
}

Vocabulary load_vocab(const std::filesystem::path& path, std::optional<std::size_t> expected_n) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("cannot open file: " + path.string());
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        tokens.push_back(unescape_token(line));
    }
    if (expected_n && tokens.size() != *expected_n)
        fail(path.string() + ": vocabulary has " + std::to_string(tokens.size()) +
             " tokens, expected " + std::to_string(*expected_n));
    return make_vocabulary(std::move(tokens));
}

void save_vocab(const Vocabulary& v, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail("cannot write file: " + path.string());
    for (const auto& t : v.tokens) out << escape_token(t) << '\n';
}

ResolvePolicy parse_resolve_policy(std::string_view name) {
    if (name == "prefer_initial" || name == "prefer-initial") return ResolvePolicy::prefer_initial;
    if (name == "exact") return ResolvePolicy::exact;
    fail("unknown resolve policy '" + std::string(name) + "'");
}

std::uint32_t resolve(const Vocabulary& v, std::string_view surface, ResolvePolicy policy,
                      std::string_view marker) {
    if (policy == ResolvePolicy::exact) {
        auto it = v.index.find(std::string(surface));
        if (it != v.index.end()) return it->second;
        fail("cannot resolve \"" + std::string(surface) + "\" (exact lookup)");
    }
    if (!surface.empty() && surface.front() == '#') {
        // "#man" addresses the raw word-internal token "man"
        const std::string raw(surface.substr(1));
        auto it = v.index.find(raw);
        if (it != v.index.end()) return it->second;
        fail("cannot resolve \"" + std::string(surface) + "\": tried \"" + raw + "\"");
    }
    const std::string initial = std::string(marker) + std::string(surface);
    auto it = v.index.find(initial);
    if (it != v.index.end()) return it->second;
    it = v.index.find(std::string(surface));
    if (it != v.index.end()) return it->second;
    fail("cannot resolve \"" + std::string(surface) + "\": tried \"" + initial + "\" and \"" +
         std::string(surface) + "\"");
}

std::string display_name(std::string_view token, std::string_view marker) {
    if (!marker.empty() && token.substr(0, marker.size()) == marker)
        return std::string(token.substr(marker.size()));
    return "#" + std::string(token);
}

}  // namespace cspace
