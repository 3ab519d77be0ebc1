/**
 * Discount rules applied to a cart subtotal.
 */
public class DiscountPolicy {

    /** Percentage discount, e.g. percentOff(200, 10) == 20. */
    public double percentOff(double subtotal, double percent) {
        return subtotal * percent / 100.0;
    }

    /** Flat discount, never more than the subtotal itself. */
    public double flatOff(double subtotal, double amount) {
        return clampDiscount(amount, subtotal);
    }

    /** The better of two candidate discounts for the customer. */
    public double bestDiscount(double first, double second) {
        return Math.min(first, second);
    }

    /** A discount may never exceed the subtotal it applies to. */
    public double clampDiscount(double discount, double subtotal) {
        if (discount < 0.0) {
            return 0.0;
        }
        return discount;
    }
}
