import type { Question } from "./types.js";

/**
 * The annotation questionnaire, in presentation order. Mirrors the service's
 * default schema; the conformance test walks this tree against the live
 * service so any drift fails loudly.
 */
export const QUESTIONS: readonly Question[] = [
  {
    qid: "q1",
    text: "Is this a photo (rather than a cartoon, graph, meme, etc.)?",
    options: ["Yes", "No", "Not Sure"],
    guard: null,
  },
  {
    qid: "q2",
    text: "Does it look like it has been taken recently (in the last three months)?",
    options: ["Yes", "No", "Cannot tell"],
    guard: { qid: "q1", values: ["Yes"] },
  },
  {
    qid: "q3",
    text: "Are there people in this image?",
    options: ["Yes", "No", "Not Sure"],
    guard: { qid: "q1", values: ["Yes"] },
  },
  {
    qid: "q4",
    text: "Are the people wearing masks?",
    options: ["Yes", "Some of them", "No", "Cannot tell"],
    guard: { qid: "q3", values: ["Yes"] },
  },
  {
    qid: "q5",
    text: "If so, which type?",
    options: ["Scarf", "Cloth", "Surgical", "FP2", "FP3", "Gas mask", "Other", "Cannot tell"],
    guard: { qid: "q4", values: ["Yes", "Some of them"] },
  },
  {
    qid: "q6",
    text: "Are the people wearing the mask correctly?",
    options: ["Yes", "No", "Only some of them", "Cannot tell", "Not sure"],
    guard: { qid: "q4", values: ["Yes", "Some of them"] },
  },
  {
    qid: "q7",
    text: "How many people are there in the image?",
    options: ["1", "2", "3", "4", "5 or more"],
    guard: { qid: "q3", values: ["Yes"] },
  },
  {
    qid: "q8",
    text: "Are they respecting social distance?",
    options: ["Yes", "No", "Cannot tell"],
    guard: { qid: "q3", values: ["Yes"] },
  },
  {
    qid: "q9",
    text: "Are they in a public place (shops, outdoors, ...)?",
    options: ["Yes", "No", "Not sure"],
    guard: { qid: "q1", values: ["Yes"] },
  },
  {
    qid: "q10",
    text: "If they are in a public place, what type?",
    options: ["street/square", "park", "shop", "hospital", "outdoors", "other", "cannot tell"],
    guard: { qid: "q9", values: ["Yes"] },
  },
  {
    qid: "q11",
    text: "What are the people doing?",
    options: [
      "socializing", "exercizing", "shopping", "queuing", "volunteering",
      "protesting", "working", "other", "cannot tell",
    ],
    guard: { qid: "q1", values: ["Yes"] },
  },
  {
    qid: "q12",
    text:
      "We have associated a country or territory with this image. " +
      "Do you think the picture was likely taken in this location?",
    options: ["Yes", "Maybe", "Surely not", "Cannot tell"],
    guard: { qid: "q1", values: ["Yes"] },
  },
];

export const QUESTION_IDS: readonly string[] = QUESTIONS.map((q) => q.qid);
