#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace emrank {

enum class Provenance { Physician, Chatbot };

/// Which anonymous slot holds which response.
enum class Assignment { Slot1IsChatbot, Slot1IsPhysician };

/// A judgment in blinded "Response 1 / Response 2" space.
enum class SlotVerdict { Slot1, Slot2, Abstain };

/// A judgment after unblinding.
enum class ProvenanceVerdict {
  ChatbotMoreEmpathetic,
  PhysicianMoreEmpathetic,
  Undecided
};

/// Number of whitespace-delimited tokens.
std::size_t word_count(std::string_view text);

struct PatientQuestion {
  std::string id;
  std::string text;
  std::size_t word_count = 0;

  /// Validates id/text and computes the word count.
  static PatientQuestion make(std::string id, std::string text);
  bool operator==(const PatientQuestion&) const = default;
};

struct CandidateResponse {
  std::string question_id;
  std::string text;
  Provenance provenance = Provenance::Physician;
  std::size_t word_count = 0;

  static CandidateResponse make(std::string question_id, std::string text,
                                Provenance provenance);
  bool operator==(const CandidateResponse&) const = default;
};

/// A question paired with one physician and one chatbot response.
struct EvalItem {
  PatientQuestion question;
  CandidateResponse physician_response;
  CandidateResponse chatbot_response;

  static EvalItem make(std::string id, std::string question,
                       std::string physician_text, std::string chatbot_text);

  const std::string& id() const noexcept { return question.id; }

  /// Throws ValidationError unless the item satisfies every invariant
  /// (non-empty texts, matching ids, one response per provenance, word
  /// counts consistent with the texts).
  void validate() const;

  bool operator==(const EvalItem&) const = default;
};

/// Two responses placed in anonymous slots. The assignment is internal and
/// must never be serialized for judges or annotators.
struct BlindedPair {
  std::string item_id;
  std::string question_text;
  std::string slot1_text;
  std::string slot2_text;
  Assignment assignment = Assignment::Slot1IsChatbot;
  std::uint64_t seed = 0;

  std::string_view slot_text(SlotVerdict slot) const;
  /// Slot occupied by the response of the given provenance.
  SlotVerdict slot_of(Provenance provenance) const noexcept;

  bool operator==(const BlindedPair&) const = default;
};

/// Orientation used by blind(); low bit of a keyed hash of (item id, seed).
Assignment blinding_assignment(std::string_view item_id,
                               std::uint64_t seed) noexcept;

BlindedPair blind(const EvalItem& item, std::uint64_t seed);

ProvenanceVerdict unblind(const BlindedPair& pair, SlotVerdict verdict) noexcept;

/// Human judgment. slot_choice is never Abstain.
struct AnnotationRecord {
  std::string item_id;
  std::string annotator_id;
  SlotVerdict slot_choice = SlotVerdict::Slot1;
  std::string justification;
  std::string submitted_at;  // ISO-8601 UTC, e.g. 2024-01-31T12:00:00Z

  void validate() const;
  bool operator==(const AnnotationRecord&) const = default;
};

/// Current time as ISO-8601 UTC with second precision.
std::string utc_timestamp_now();

std::string_view to_string(Provenance p) noexcept;
std::string_view to_string(Assignment a) noexcept;
std::string_view to_string(SlotVerdict v) noexcept;
std::string_view to_string(ProvenanceVerdict v) noexcept;

std::optional<SlotVerdict> parse_slot_verdict(std::string_view s) noexcept;
std::optional<ProvenanceVerdict> parse_provenance_verdict(
    std::string_view s) noexcept;
std::optional<Assignment> parse_assignment(std::string_view s) noexcept;

}  // namespace emrank
