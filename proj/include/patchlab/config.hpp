#ifndef PATCHLAB_CONFIG_HPP
#define PATCHLAB_CONFIG_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace patchlab {

// Flat key = value experiment configuration. Every key has a documented
// default; unknown keys in a file are a hard error so typos cannot silently
// change an experiment.
class Config {
public:
    static Config defaults();

    // Defaults overlaid with the file's assignments.
    static Config from_file(const std::string& path);

    // Parses text in key = value form ('#' comments, blank lines allowed).
    static Config from_text(const std::string& text);

    bool has(const std::string& key) const;
    void set(const std::string& key, const std::string& value); // key must be known

    const std::string& get_string(const std::string& key) const;
    double get_double(const std::string& key) const;
    int get_int(const std::string& key) const;
    std::uint64_t get_u64(const std::string& key) const;
    std::vector<int> get_int_list(const std::string& key) const;       // comma separated
    std::vector<double> get_double_list(const std::string& key) const;

    const std::map<std::string, std::string>& entries() const { return values_; }

    // Key-sorted snapshot rows for report provenance.
    std::vector<std::pair<std::string, std::string>> snapshot() const;

private:
    std::map<std::string, std::string> values_;
};

} // namespace patchlab

#endif
