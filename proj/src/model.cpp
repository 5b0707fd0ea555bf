#include "emrank/model.hpp"

#include <array>
#include <cctype>
#include <chrono>
#include <ctime>

#include "emrank/error.hpp"
#include "emrank/hashing.hpp"

namespace emrank {

std::string hex64(std::uint64_t value) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kDigits[value & 0xf];
    value >>= 4;
  }
  return out;
}

std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  std::uint64_t state = seed;
  for (std::size_t i = n; i > 1; --i) {
    state += 0x9e3779b97f4a7c15ULL;
    // Multiply-shift range reduction keeps the draw unbiased enough for
    // ordering purposes without rejection loops.
    const auto r = static_cast<std::size_t>(
        (static_cast<unsigned __int128>(mix64(state)) * i) >> 64);
    std::swap(perm[i - 1], perm[r]);
  }
  return perm;
}

std::size_t word_count(std::string_view text) {
  std::size_t count = 0;
  bool in_word = false;
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      in_word = false;
    } else if (!in_word) {
      in_word = true;
      ++count;
    }
  }
  return count;
}

namespace {

bool blank(std::string_view s) { return word_count(s) == 0; }

}  // namespace

PatientQuestion PatientQuestion::make(std::string id, std::string text) {
  if (id.empty()) throw ValidationError("question id must not be empty");
  if (blank(text))
    throw ValidationError("question '" + id + "' has empty text");
  const auto wc = emrank::word_count(text);
  return {std::move(id), std::move(text), wc};
}

CandidateResponse CandidateResponse::make(std::string question_id,
                                          std::string text,
                                          Provenance provenance) {
  if (blank(text)) {
    throw ValidationError("item '" + question_id + "' has an empty " +
                          std::string(to_string(provenance)) + " response");
  }
  const auto wc = emrank::word_count(text);
  return {std::move(question_id), std::move(text), provenance, wc};
}

EvalItem EvalItem::make(std::string id, std::string question,
                        std::string physician_text, std::string chatbot_text) {
  EvalItem item;
  item.question = PatientQuestion::make(id, std::move(question));
  item.physician_response = CandidateResponse::make(
      id, std::move(physician_text), Provenance::Physician);
  item.chatbot_response =
      CandidateResponse::make(id, std::move(chatbot_text), Provenance::Chatbot);
  return item;
}

void EvalItem::validate() const {
  if (question.id.empty()) throw ValidationError("item without id");
  const std::string& qid = question.id;
  if (blank(question.text))
    throw ValidationError("item '" + qid + "' has empty question text");
  if (question.word_count != word_count(question.text))
    throw ValidationError("item '" + qid + "' question word count mismatch");
  for (const CandidateResponse* r : {&physician_response, &chatbot_response}) {
    if (blank(r->text))
      throw ValidationError("item '" + qid + "' is missing a " +
                            std::string(to_string(r->provenance)) +
                            " response");
    if (r->question_id != qid)
      throw ValidationError("item '" + qid +
                            "' has a response for question '" +
                            r->question_id + "'");
    if (r->word_count != word_count(r->text))
      throw ValidationError("item '" + qid + "' response word count mismatch");
  }
  if (physician_response.provenance != Provenance::Physician ||
      chatbot_response.provenance != Provenance::Chatbot)
    throw ValidationError("item '" + qid + "' has mislabeled provenances");
}

std::string_view BlindedPair::slot_text(SlotVerdict slot) const {
  switch (slot) {
    case SlotVerdict::Slot1:
      return slot1_text;
    case SlotVerdict::Slot2:
      return slot2_text;
    case SlotVerdict::Abstain:
      break;
  }
  throw ValidationError("Abstain does not name a slot");
}

SlotVerdict BlindedPair::slot_of(Provenance provenance) const noexcept {
  const bool chatbot_first = assignment == Assignment::Slot1IsChatbot;
  const bool is_chatbot = provenance == Provenance::Chatbot;
  return chatbot_first == is_chatbot ? SlotVerdict::Slot1 : SlotVerdict::Slot2;
}

Assignment blinding_assignment(std::string_view item_id,
                               std::uint64_t seed) noexcept {
  return (keyed_hash(item_id, seed) & 1U) ? Assignment::Slot1IsChatbot
                                          : Assignment::Slot1IsPhysician;
}

BlindedPair blind(const EvalItem& item, std::uint64_t seed) {
  item.validate();
  BlindedPair pair;
  pair.item_id = item.id();
  pair.question_text = item.question.text;
  pair.seed = seed;
  pair.assignment = blinding_assignment(item.id(), seed);
  if (pair.assignment == Assignment::Slot1IsChatbot) {
    pair.slot1_text = item.chatbot_response.text;
    pair.slot2_text = item.physician_response.text;
  } else {
    pair.slot1_text = item.physician_response.text;
    pair.slot2_text = item.chatbot_response.text;
  }
  return pair;
}

ProvenanceVerdict unblind(const BlindedPair& pair,
                          SlotVerdict verdict) noexcept {
  if (verdict == SlotVerdict::Abstain) return ProvenanceVerdict::Undecided;
  return verdict == pair.slot_of(Provenance::Chatbot)
             ? ProvenanceVerdict::ChatbotMoreEmpathetic
             : ProvenanceVerdict::PhysicianMoreEmpathetic;
}

void AnnotationRecord::validate() const {
  if (item_id.empty()) throw ValidationError("annotation without item id");
  if (annotator_id.empty())
    throw ValidationError("annotation for '" + item_id +
                          "' without annotator id");
  if (slot_choice == SlotVerdict::Abstain)
    throw ValidationError("human annotations must choose Response 1 or 2");
}

std::string utc_timestamp_now() {
  const std::time_t now =
      std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::array<char, 32> buf{};
  std::strftime(buf.data(), buf.size(), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf.data();
}

std::string_view to_string(Provenance p) noexcept {
  return p == Provenance::Chatbot ? "chatbot" : "physician";
}

std::string_view to_string(Assignment a) noexcept {
  return a == Assignment::Slot1IsChatbot ? "slot1_is_chatbot"
                                         : "slot1_is_physician";
}

std::string_view to_string(SlotVerdict v) noexcept {
  switch (v) {
    case SlotVerdict::Slot1:
      return "slot1";
    case SlotVerdict::Slot2:
      return "slot2";
    case SlotVerdict::Abstain:
      break;
  }
  return "abstain";
}

std::string_view to_string(ProvenanceVerdict v) noexcept {
  switch (v) {
    case ProvenanceVerdict::ChatbotMoreEmpathetic:
      return "chatbot";
    case ProvenanceVerdict::PhysicianMoreEmpathetic:
      return "physician";
    case ProvenanceVerdict::Undecided:
      break;
  }
  return "undecided";
}

std::optional<SlotVerdict> parse_slot_verdict(std::string_view s) noexcept {
  if (s == "slot1" || s == "1") return SlotVerdict::Slot1;
  if (s == "slot2" || s == "2") return SlotVerdict::Slot2;
  if (s == "abstain") return SlotVerdict::Abstain;
  return std::nullopt;
}

std::optional<ProvenanceVerdict> parse_provenance_verdict(
    std::string_view s) noexcept {
  if (s == "chatbot") return ProvenanceVerdict::ChatbotMoreEmpathetic;
  if (s == "physician") return ProvenanceVerdict::PhysicianMoreEmpathetic;
  if (s == "undecided") return ProvenanceVerdict::Undecided;
  return std::nullopt;
}

std::optional<Assignment> parse_assignment(std::string_view s) noexcept {
  if (s == "slot1_is_chatbot") return Assignment::Slot1IsChatbot;
  if (s == "slot1_is_physician") return Assignment::Slot1IsPhysician;
  return std::nullopt;
}

}  // namespace emrank
