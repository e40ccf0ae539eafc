/** A box-list file that cannot be parsed or carries impossible boxes. */
export class BoxListError extends Error {}

/** An image file whose payload is not a supported, decodable image. */
export class ImageDecodeError extends Error {}

/** Inputs that are missing or inconsistent with each other. */
export class ExtractionError extends Error {}
